"""Encoder-decoder flow-map network with hand-written backpropagation.

Two parallel fully connected branches embed the start position (3 in)
and the file cycle (1 in); their outputs are concatenated into a latent
vector and decoded to the end position (3 out). Every layer except the
final decoder layer is followed by a sine activation sin(w0 * (Wx + b)).
No autograd framework is involved: gradients are derived in closed form
layer by layer, which keeps the module dependency-free and makes the
finite-difference check in :func:`gradient_check` meaningful.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .vecfield import CoordinateScaling, FlowMapDataset, normalize_cycles

__all__ = [
    "DropoutConfig",
    "ModelConfig",
    "FlowMapModel",
    "init_model",
    "forward",
    "loss_and_grads",
    "draw_masks",
    "train",
    "TrainReport",
    "gradient_check",
    "predict_end_positions",
]

_PREDICT_CHUNK = 65536  # fixed so identical queries batch identically


@dataclass(frozen=True)
class DropoutConfig:
    """Inverted-dropout settings applied after activations.

    ``all_layers`` masks every activation output (both branches and the
    decoder's hidden layers); ``last_layer`` masks only the final
    activation before the output layer. With a single decoder layer the
    final activations are the two branch outputs, so both are masked.
    """

    mode: str = "none"  # none | all_layers | last_layer
    rate: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "all_layers", "last_layer"):
            raise ValueError(f"unknown dropout mode {self.mode!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")
        if self.mode == "none" and self.rate != 0.0:
            raise ValueError("dropout rate must be 0 when mode is 'none'")
        if self.mode != "none" and self.rate == 0.0:
            raise ValueError(f"dropout mode {self.mode!r} needs a positive rate")


@dataclass(frozen=True)
class ModelConfig:
    encoder_layers: int = 2
    decoder_layers: int = 3
    latent_dim: int = 64
    hidden_width: int | None = None  # defaults to latent_dim
    sine_frequency: float = 30.0
    dropout: DropoutConfig = field(default_factory=DropoutConfig)

    def __post_init__(self):
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ValueError("encoder_layers and decoder_layers must be >= 1")
        if self.latent_dim < 2 or self.latent_dim % 2:
            raise ValueError("latent_dim must be an even integer >= 2")
        w = self.resolved_width
        if w < 2 or w % 2:
            raise ValueError("hidden_width must be an even integer >= 2")
        if self.sine_frequency <= 0:
            raise ValueError("sine_frequency must be positive")

    @property
    def resolved_width(self) -> int:
        return self.latent_dim if self.hidden_width is None else self.hidden_width

    def layer_shapes(self) -> list[tuple[str, int, int]]:
        """(group, fan_in, fan_out) triples in parameter order.

        Groups are ``pos`` and ``cyc`` for the two encoder branches and
        ``dec`` for the decoder; branches run at half width and meet in
        the latent vector.
        """
        bw = self.resolved_width // 2
        half = self.latent_dim // 2
        shapes: list[tuple[str, int, int]] = []
        for group, n_in in (("pos", 3), ("cyc", 1)):
            if self.encoder_layers == 1:
                shapes.append((group, n_in, half))
            else:
                shapes.append((group, n_in, bw))
                shapes += [(group, bw, bw)] * (self.encoder_layers - 2)
                shapes.append((group, bw, half))
        if self.decoder_layers == 1:
            shapes.append(("dec", self.latent_dim, 3))
        else:
            shapes.append(("dec", self.latent_dim, self.resolved_width))
            shapes += [("dec", self.resolved_width, self.resolved_width)] * (
                self.decoder_layers - 2
            )
            shapes.append(("dec", self.resolved_width, 3))
        return shapes

    def param_count(self) -> int:
        return sum((fi + 1) * fo for _, fi, fo in self.layer_shapes())

    def dropout_sites(self) -> list[int]:
        """Indices (into layer_shapes order) whose activation is masked."""
        shapes = self.layer_shapes()
        if self.dropout.mode == "none":
            return []
        n = len(shapes)
        activated = list(range(n - 1))  # final decoder layer has no activation
        if self.dropout.mode == "all_layers":
            return activated
        if self.decoder_layers >= 2:
            return [n - 2]
        # Single decoder layer: the last activations are the branch ends.
        e = self.encoder_layers
        return [e - 1, 2 * e - 1]


class FlowMapModel:
    """Parameters plus optional binding to a dataset's coordinate frame.

    ``params`` is a list of [W, b] pairs, W of shape (fan_in, fan_out),
    ordered as :meth:`ModelConfig.layer_shapes`. The binding (scaling,
    n_cycles, delta) lets the model accept domain-unit queries.
    """

    def __init__(
        self,
        config: ModelConfig,
        params: list[list[np.ndarray]],
        scaling: CoordinateScaling | None = None,
        n_cycles: int | None = None,
        delta: float | None = None,
    ):
        shapes = config.layer_shapes()
        if len(params) != len(shapes):
            raise ValueError("parameter list does not match config layout")
        for (_, fi, fo), (w, b) in zip(shapes, params):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise ValueError(
                    f"layer shape mismatch: expected {(fi, fo)}, got {w.shape}"
                )
        self.config = config
        self.params = params
        self.scaling = scaling
        self.n_cycles = n_cycles
        self.delta = delta

    @property
    def dtype(self):
        return self.params[0][0].dtype

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in self.params)

    def bind_dataset(self, dataset: FlowMapDataset) -> "FlowMapModel":
        self.scaling = dataset.scaling
        self.n_cycles = dataset.n_cycles
        self.delta = dataset.delta
        return self

    def copy(self) -> "FlowMapModel":
        return FlowMapModel(
            self.config,
            [[w.copy(), b.copy()] for w, b in self.params],
            self.scaling,
            self.n_cycles,
            self.delta,
        )

    def astype(self, dtype) -> "FlowMapModel":
        return FlowMapModel(
            self.config,
            [[w.astype(dtype), b.astype(dtype)] for w, b in self.params],
            self.scaling,
            self.n_cycles,
            self.delta,
        )

    def flat_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.params])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for pair in self.params:
            w, b = pair
            pair[0] = vec[pos : pos + w.size].reshape(w.shape).astype(w.dtype)
            pos += w.size
            pair[1] = vec[pos : pos + b.size].astype(b.dtype)
            pos += b.size
        if pos != vec.size:
            raise ValueError("flat vector length does not match parameter count")


def init_model(config: ModelConfig, rng_seed: int = 0) -> FlowMapModel:
    """Sine-aware uniform init, frequency-compensated past the first layers.

    The two branch input layers draw from U(-1/fan_in, 1/fan_in); every
    later layer from U(+-sqrt(6/fan_in)/w0). Biases share their layer's
    range. Weights are float32.
    """
    rng = np.random.default_rng(rng_seed)
    w0 = config.sine_frequency
    shapes = config.layer_shapes()
    params = []
    for i, (group, fi, fo) in enumerate(shapes):
        first = group in ("pos", "cyc") and (i == 0 or shapes[i - 1][0] != group)
        bound = 1.0 / fi if first else np.sqrt(6.0 / fi) / w0
        w = rng.uniform(-bound, bound, size=(fi, fo)).astype(np.float32)
        b = rng.uniform(-bound, bound, size=fo).astype(np.float32)
        params.append([w, b])
    return FlowMapModel(config, params)


def draw_masks(config: ModelConfig, batch: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Binary keep-masks for one forward pass, one per dropout site.

    Drawn site by site in layer order so the stream of random numbers,
    and therefore the masks, does not depend on how callers batch rows.
    """
    shapes = config.layer_shapes()
    rate = config.dropout.rate
    masks = []
    for site in config.dropout_sites():
        fo = shapes[site][2]
        masks.append((rng.random((batch, fo)) >= rate).astype(np.float64))
    return masks


def _run_forward(model: FlowMapModel, x: np.ndarray, c: np.ndarray, masks, keep_cache: bool):
    """Shared forward pass; returns (y, cache or None)."""
    cfg = model.config
    w0 = np.asarray(cfg.sine_frequency, dtype=model.dtype)
    sites = cfg.dropout_sites() if masks is not None else []
    if masks is not None and len(masks) != len(sites):
        raise ValueError(f"expected {len(sites)} dropout masks, got {len(masks)}")
    keep_scale = 1.0 - cfg.dropout.rate
    e = cfg.encoder_layers

    inputs, preacts, applied = [], [], {}

    def dense(a, layer_idx, activate):
        w, b = model.params[layer_idx]
        inputs.append(a if keep_cache else None)
        z = a @ w + b
        preacts.append(z if keep_cache else None)
        if activate:
            a = np.sin(w0 * z)
        else:
            a = z
        if layer_idx in sites:
            m = masks[sites.index(layer_idx)].astype(model.dtype, copy=False)
            if m.shape != a.shape:
                raise ValueError(f"mask shape {m.shape} does not match {a.shape}")
            a = a * (m / keep_scale)
            applied[layer_idx] = m
        return a

    a_pos = x
    for i in range(e):
        a_pos = dense(a_pos, i, True)
    a_cyc = c[:, None]
    for i in range(e):
        a_cyc = dense(a_cyc, e + i, True)
    a = np.concatenate([a_pos, a_cyc], axis=1)
    n_layers = len(model.params)
    for i in range(2 * e, n_layers):
        a = dense(a, i, i != n_layers - 1)
    cache = (inputs, preacts, applied) if keep_cache else None
    return a, cache


def forward(
    model: FlowMapModel,
    starts_norm,
    cycles_norm,
    masks: list[np.ndarray] | None = None,
) -> np.ndarray:
    """End positions (B, 3) in normalized coordinates.

    ``masks`` enables inference-time dropout with caller-supplied keep
    masks (see :func:`draw_masks`); None runs the deterministic network.
    """
    x = np.ascontiguousarray(starts_norm, dtype=model.dtype)
    c = np.ascontiguousarray(cycles_norm, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"starts must have shape (B, 3), got {x.shape}")
    if c.shape != (x.shape[0],):
        raise ValueError("cycles must be a vector matching the batch size")
    y, _ = _run_forward(model, x, c, masks, keep_cache=False)
    return y


def loss_and_grads(
    model: FlowMapModel,
    starts_norm,
    cycles_norm,
    targets_norm,
    masks: list[np.ndarray] | None = None,
    loss: str = "l1",
) -> tuple[float, list[list[np.ndarray]]]:
    """Training loss and its exact parameter gradients for one batch.

    The L1 loss (mean absolute error over batch and components) is the
    training objective; ``loss="l2"`` (mean squared error) is available
    as a smooth alternative for diagnostics.
    """
    dtype = model.dtype
    x = np.ascontiguousarray(starts_norm, dtype=dtype)
    c = np.ascontiguousarray(cycles_norm, dtype=dtype)
    t = np.ascontiguousarray(targets_norm, dtype=dtype)
    if loss not in ("l1", "l2"):
        raise ValueError(f"unknown loss {loss!r}")
    y, cache = _run_forward(model, x, c, masks, keep_cache=True)
    inputs, preacts, applied = cache
    resid = y - t
    denom = resid.size
    if loss == "l1":
        value = float(np.mean(np.abs(resid)))
        dy = np.sign(resid) / denom
    else:
        value = float(np.mean(resid**2))
        dy = 2.0 * resid / denom
    dy = dy.astype(dtype)

    cfg = model.config
    w0 = cfg.sine_frequency
    keep_scale = 1.0 - cfg.dropout.rate
    e = cfg.encoder_layers
    n_layers = len(model.params)
    grads: list[list[np.ndarray]] = [None] * n_layers

    def back_through(layer_idx, d_out, activated):
        """d_out is dL/d(layer output after activation and dropout)."""
        if layer_idx in applied:
            d_out = d_out * (applied[layer_idx].astype(dtype) / keep_scale)
        if activated:
            dz = d_out * (w0 * np.cos(w0 * preacts[layer_idx])).astype(dtype)
        else:
            dz = d_out
        w, _ = model.params[layer_idx]
        grads[layer_idx] = [inputs[layer_idx].T @ dz, dz.sum(axis=0)]
        return dz @ w.T

    d = dy
    for i in range(n_layers - 1, 2 * e - 1, -1):
        d = back_through(i, d, activated=i != n_layers - 1)
    half = cfg.latent_dim // 2
    d_pos, d_cyc = d[:, :half], d[:, half:]
    for i in range(e - 1, -1, -1):
        d_cyc = back_through(e + i, d_cyc, activated=True)
        d_pos = back_through(i, d_pos, activated=True)
    return value, grads


@dataclass
class TrainReport:
    iters: int
    batch_size: int
    learning_rate: float
    initial_probe_loss: float
    final_probe_loss: float
    final_batch_loss: float
    eval_abs_error: float | None
    wall_time_s: float


def train(
    model: FlowMapModel,
    dataset: FlowMapDataset,
    iters: int,
    batch_size: int = 1024,
    learning_rate: float = 1e-4,
    rng_seed: int = 0,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    eval_data=None,
) -> TrainReport:
    """Adam on the L1 flow-map objective; mutates ``model`` in place.

    Batches are drawn by reshuffling the sample order every epoch from a
    generator seeded with ``rng_seed``. The probe loss is measured with
    dropout off on a fixed unshuffled prefix of the data, before and
    after training. ``eval_data`` is an optional (seeds, cycles, ends)
    triple in domain units; when given, the report carries the mean
    absolute prediction error on it. Raises if the loss goes non-finite.
    """
    if iters < 0:
        raise ValueError("iters must be >= 0")
    model.bind_dataset(dataset)
    t_start = time.monotonic()
    x64, c64, y64 = dataset.training_arrays()
    if x64.shape[0] == 0:
        raise ValueError("dataset has no valid training samples")
    x = x64.astype(np.float32)
    c = c64.astype(np.float32)
    y = y64.astype(np.float32)
    n = x.shape[0]
    batch_size = max(1, min(batch_size, n))
    probe = slice(0, min(4096, n))

    def probe_loss():
        pred = forward(model, x[probe], c[probe])
        return float(np.mean(np.abs(pred - y[probe])))

    initial = probe_loss()
    rng = np.random.default_rng(rng_seed)
    b1, b2 = betas
    m_state = [[np.zeros_like(w), np.zeros_like(b)] for w, b in model.params]
    v_state = [[np.zeros_like(w), np.zeros_like(b)] for w, b in model.params]
    use_dropout = model.config.dropout.mode != "none"
    perm = np.empty(0, dtype=np.int64)
    pos = n
    last_loss = initial
    for it in range(iters):
        if pos + batch_size > n:
            perm = rng.permutation(n)
            pos = 0
        idx = perm[pos : pos + batch_size]
        pos += batch_size
        masks = draw_masks(model.config, idx.size, rng) if use_dropout else None
        last_loss, grads = loss_and_grads(model, x[idx], c[idx], y[idx], masks)
        if not np.isfinite(last_loss):
            raise RuntimeError(
                f"training diverged at iteration {it}: loss={last_loss!r}; "
                f"lower the learning rate (currently {learning_rate})"
            )
        t = it + 1
        corr1 = 1.0 - b1**t
        corr2 = 1.0 - b2**t
        for pair, g, ms, vs in zip(model.params, grads, m_state, v_state):
            for k in range(2):
                ms[k] *= b1
                ms[k] += (1.0 - b1) * g[k]
                vs[k] *= b2
                vs[k] += (1.0 - b2) * g[k] * g[k]
                step = (learning_rate / corr1) * ms[k] / (np.sqrt(vs[k] / corr2) + eps)
                pair[k] -= step.astype(pair[k].dtype)

    final = probe_loss()
    eval_err = None
    if eval_data is not None:
        seeds_d, cycles_d, ends_d = eval_data
        pred = predict_end_positions(model, seeds_d, cycles_d)
        eval_err = float(np.mean(np.abs(pred - np.asarray(ends_d, dtype=np.float64))))
    return TrainReport(
        iters=iters,
        batch_size=batch_size,
        learning_rate=learning_rate,
        initial_probe_loss=initial,
        final_probe_loss=final,
        final_batch_loss=float(last_loss),
        eval_abs_error=eval_err,
        wall_time_s=time.monotonic() - t_start,
    )


def gradient_check(
    model: FlowMapModel,
    starts_norm,
    cycles_norm,
    targets_norm,
    epsilon: float = 1e-6,
    n_coords: int = 32,
    rng_seed: int = 0,
    masks: list[np.ndarray] | None = None,
    loss: str = "l1",
    floor: float = 1e-4,
) -> float:
    """Largest relative gap between analytic and central-difference grads.

    Runs in float64 on a copy of the model. Relative error for one
    parameter coordinate is |a - n| / max(|a|, |n|, floor); the floor
    keeps coordinates whose true gradient cancels to ~0 (an L1 sign
    balance does this exactly) from dividing rounding noise by itself.
    For the L1 loss the batch must also keep its residuals away from
    the kink at zero; violations raise instead of returning a
    meaningless number.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    m64 = model.astype(np.float64)
    x = np.asarray(starts_norm, dtype=np.float64)
    c = np.asarray(cycles_norm, dtype=np.float64)
    t = np.asarray(targets_norm, dtype=np.float64)
    if loss == "l1":
        resid = forward(m64, x, c, masks) - t
        if np.min(np.abs(resid)) < 50.0 * epsilon:
            raise ValueError(
                "a residual sits too close to the L1 kink for finite "
                "differences; perturb the batch or use loss='l2'"
            )
    _, grads = loss_and_grads(m64, x, c, t, masks, loss=loss)
    flat_grad = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
    theta = m64.flat_params()
    rng = np.random.default_rng(rng_seed)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    worst = 0.0
    probe = m64.copy()
    for j in coords:
        bumped = theta.copy()
        bumped[j] += epsilon
        probe.set_flat(bumped)
        y_hi = forward(probe, x, c, masks)
        bumped[j] -= 2.0 * epsilon
        probe.set_flat(bumped)
        y_lo = forward(probe, x, c, masks)
        if loss == "l1":
            l_hi = float(np.mean(np.abs(y_hi - t)))
            l_lo = float(np.mean(np.abs(y_lo - t)))
        else:
            l_hi = float(np.mean((y_hi - t) ** 2))
            l_lo = float(np.mean((y_lo - t) ** 2))
        numeric = (l_hi - l_lo) / (2.0 * epsilon)
        analytic = flat_grad[j]
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, rel)
    return worst


def predict_end_positions(model: FlowMapModel, starts, cycles) -> np.ndarray:
    """Domain-unit end positions for domain-unit starts and file cycles.

    Requires the model to be bound to a dataset's coordinate frame.
    Inputs are chunked at a fixed size so the result is byte-stable for
    a given model regardless of query length.
    """
    if model.scaling is None or model.n_cycles is None:
        raise ValueError("model is not bound to a coordinate frame; train it "
                         "on a dataset or load one saved with its binding")
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    cycles = np.atleast_1d(np.asarray(cycles, dtype=np.float64))
    if cycles.shape[0] != starts.shape[0]:
        raise ValueError("starts and cycles must have matching lengths")
    x = model.scaling.normalize(starts)
    c = normalize_cycles(cycles, model.n_cycles)
    outs = []
    for lo in range(0, x.shape[0], _PREDICT_CHUNK):
        sl = slice(lo, lo + _PREDICT_CHUNK)
        outs.append(forward(model, x[sl], c[sl]))
    y = np.concatenate(outs, axis=0).astype(np.float64)
    return model.scaling.denormalize(y)
