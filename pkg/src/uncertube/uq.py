"""Uncertainty quantification over flow-map predictions.

Three samplers produce ensembles of predicted pathlines per seed: deep
ensembles (independently trained models), MC dropout (stochastic masks
at inference), and SWAG (Gaussian posterior fitted from constant-rate
SGD snapshots). All of them are deterministic given their rng seeds:
dropout masks come from one counter-based stream per (seed, member) and
SWAG parameter draws from one stream per member, so results do not
depend on batching layout or evaluation order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .flowmap import FlowMapModel, draw_masks, forward, loss_and_grads
from .vecfield import normalize_cycles

__all__ = [
    "TrajectoryEnsemble",
    "ensemble_from_arrays",
    "deep_ensemble_sample",
    "mc_dropout_sample",
    "SwagConfig",
    "SwagPosterior",
    "swag_fit",
    "swag_sample_trajectories",
]


@dataclass
class TrajectoryEnsemble:
    """Predicted pathline cloud for one seed.

    ``members`` has shape (K, N+1, 3) with K >= 2 sampled paths over N
    steps of ``delta``; ``mean_path`` is the representative path. Every
    path starts exactly at ``seed``.
    """

    seed: np.ndarray
    delta: float
    mean_path: np.ndarray
    members: np.ndarray
    method: str = "external"

    def __post_init__(self):
        self.seed = np.asarray(self.seed, dtype=np.float64)
        self.mean_path = np.asarray(self.mean_path, dtype=np.float64)
        self.members = np.asarray(self.members, dtype=np.float64)
        if self.seed.shape != (3,):
            raise ValueError("seed must have shape (3,)")
        if self.mean_path.ndim != 2 or self.mean_path.shape[1] != 3:
            raise ValueError("mean_path must have shape (N+1, 3)")
        if self.mean_path.shape[0] < 2:
            raise ValueError("paths need at least one step")
        if self.members.ndim != 3 or self.members.shape[1:] != self.mean_path.shape:
            raise ValueError("members must have shape (K, N+1, 3)")
        if self.members.shape[0] < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError("delta must be positive and finite")
        if not np.array_equal(self.mean_path[0], self.seed):
            raise ValueError("mean path must start at the seed")
        for k in range(self.members.shape[0]):
            if not np.array_equal(self.members[k, 0], self.seed):
                raise ValueError(f"member {k} does not start at the seed")

    @property
    def n_steps(self) -> int:
        return self.mean_path.shape[0] - 1

    @property
    def n_members(self) -> int:
        return self.members.shape[0]


def ensemble_from_arrays(
    seed, delta: float, members, mean_path=None, method: str = "external"
) -> TrajectoryEnsemble:
    """Build a validated ensemble; the mean is averaged if not supplied."""
    members = np.asarray(members, dtype=np.float64)
    if mean_path is None and members.ndim == 3:
        mean_path = members.mean(axis=0)
        mean_path[0] = np.asarray(seed, dtype=np.float64)
    return TrajectoryEnsemble(seed, delta, mean_path, members, method)


def _require_binding(model: FlowMapModel):
    if model.scaling is None or model.n_cycles is None or model.delta is None:
        raise ValueError("model must be bound to a dataset's coordinate frame")


def _predicted_paths(
    model: FlowMapModel, seeds: np.ndarray, n_steps: int, masks=None
) -> np.ndarray:
    """(S, N+1, 3) domain-unit paths; row order in the batch is seed-major."""
    _require_binding(model)
    s = seeds.shape[0]
    cycles = np.tile(np.arange(1, n_steps + 1, dtype=np.float64), s)
    starts = np.repeat(seeds, n_steps, axis=0)
    x = model.scaling.normalize(starts)
    c = normalize_cycles(cycles, model.n_cycles)
    y = np.asarray(forward(model, x, c, masks=masks), dtype=np.float64)
    ends = model.scaling.denormalize(y).reshape(s, n_steps, 3)
    return np.concatenate([seeds[:, None, :], ends], axis=1)


def _as_seed_block(seeds) -> np.ndarray:
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    if seeds.ndim != 2 or seeds.shape[1] != 3:
        raise ValueError(f"seeds must have shape (S, 3), got {seeds.shape}")
    return seeds


def deep_ensemble_sample(
    models: list[FlowMapModel], seeds, n_steps: int | None = None
) -> list[TrajectoryEnsemble]:
    """One ensemble per seed from independently trained models.

    All models must share the network layout and coordinate binding;
    the mean path is the member average.
    """
    if len(models) < 2:
        raise ValueError("a deep ensemble needs at least 2 models")
    ref = models[0]
    _require_binding(ref)
    for i, m in enumerate(models[1:], start=1):
        if m.config != ref.config:
            raise ValueError(f"model {i} has a different layout than model 0")
        _require_binding(m)
        if (
            m.n_cycles != ref.n_cycles
            or m.delta != ref.delta
            or m.scaling.mode != ref.scaling.mode
            or not np.array_equal(m.scaling.offset, ref.scaling.offset)
            or not np.array_equal(m.scaling.scale, ref.scaling.scale)
        ):
            raise ValueError(f"model {i} is bound to a different coordinate frame")
    seeds = _as_seed_block(seeds)
    if n_steps is None:
        n_steps = ref.n_cycles - 1
    paths = np.stack([_predicted_paths(m, seeds, n_steps) for m in models])
    mean = paths.mean(axis=0)
    mean[:, 0] = seeds
    return [
        TrajectoryEnsemble(seeds[j], ref.delta, mean[j], paths[:, j], "deep_ensemble")
        for j in range(seeds.shape[0])
    ]


def mc_dropout_sample(
    model: FlowMapModel,
    seeds,
    n_members: int,
    rng_seed: int,
    n_steps: int | None = None,
    mean_mode: str = "base",
) -> list[TrajectoryEnsemble]:
    """Ensembles from stochastic dropout masks at inference time.

    Member k of seed s draws its masks from the dedicated stream
    default_rng([rng_seed, s, k]), step by step and site by site, so the
    same (seed, member) pair always sees the same masks no matter how
    the batch is laid out or which other seeds are queried with it.
    """
    _require_binding(model)
    cfg = model.config
    if cfg.dropout.mode == "none":
        raise ValueError("model was built without dropout; enable a dropout "
                         "mode in its config to use mc_dropout_sample")
    if n_members < 2:
        raise ValueError("n_members must be >= 2")
    if mean_mode not in ("base", "member_average"):
        raise ValueError(f"unknown mean_mode {mean_mode!r}")
    seeds = _as_seed_block(seeds)
    if n_steps is None:
        n_steps = model.n_cycles - 1
    s = seeds.shape[0]
    shapes = cfg.layer_shapes()
    widths = [shapes[site][2] for site in cfg.dropout_sites()]
    member_paths = np.empty((n_members, s, n_steps + 1, 3))
    for k in range(n_members):
        masks = [np.empty((s * n_steps, w)) for w in widths]
        for j in range(s):
            rng = np.random.default_rng([rng_seed, j, k])
            for step in range(n_steps):
                row = j * n_steps + step
                for site, w in enumerate(widths):
                    masks[site][row] = rng.random(w) >= cfg.dropout.rate
        member_paths[k] = _predicted_paths(model, seeds, n_steps, masks=masks)
    if mean_mode == "base":
        mean = _predicted_paths(model, seeds, n_steps)
    else:
        mean = member_paths.mean(axis=0)
        mean[:, 0] = seeds
    return [
        TrajectoryEnsemble(seeds[j], model.delta, mean[j], member_paths[:, j], "mc_dropout")
        for j in range(s)
    ]


@dataclass(frozen=True)
class SwagConfig:
    """Constant-rate SGD snapshot collection settings."""

    swag_lr: float = 5e-4
    n_snapshots: int = 1000
    rank: int = 100
    momentum: float = 0.9
    weight_decay: float = 1e-8
    batch_size: int = 1024
    snapshot_every: int = 1

    def __post_init__(self):
        if self.swag_lr < 0:
            raise ValueError("swag_lr must be >= 0")
        if self.n_snapshots < 2:
            raise ValueError("n_snapshots must be >= 2")
        if self.rank < 0:
            raise ValueError("rank must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.snapshot_every < 1:
            raise ValueError("snapshot_every must be >= 1")


class SwagPosterior:
    """Gaussian posterior from parameter snapshots.

    Moments are accumulated as float64 sums of deviations from the first
    snapshot; the shift cancels the catastrophic subtraction in
    E[x^2] - E[x]^2, and n identical snapshots collapse to exactly zero
    variance and exactly their common value as the mean. The deviation
    ring buffer keeps the last ``rank`` columns of snapshot - running
    mean for the low-rank covariance term.
    """

    def __init__(self, n_params: int, rank: int):
        self.n_params = n_params
        self.rank = rank
        self.n_snapshots = 0
        self._shift = None
        self._sum_d = np.zeros(n_params, dtype=np.float64)
        self._sumsq_d = np.zeros(n_params, dtype=np.float64)
        self._dev: list[np.ndarray] = []

    @classmethod
    def from_state(cls, state: dict) -> "SwagPosterior":
        """Rebuild a posterior from :meth:`state` output."""
        post = cls(int(state["n_params"]), int(state["rank"]))
        post.n_snapshots = int(state["n_snapshots"])
        shift = state["shift"]
        post._shift = None if shift is None else np.asarray(shift, dtype=np.float64)
        post._sum_d = np.asarray(state["sum_d"], dtype=np.float64).copy()
        post._sumsq_d = np.asarray(state["sumsq_d"], dtype=np.float64).copy()
        dev = np.asarray(state["deviations"], dtype=np.float32)
        if post._sum_d.shape != (post.n_params,) or post._sumsq_d.shape != (post.n_params,):
            raise ValueError("moment arrays do not match n_params")
        if dev.size and (dev.ndim != 2 or dev.shape[1] != post.n_params):
            raise ValueError("deviation matrix does not match n_params")
        post._dev = [row.copy() for row in dev.reshape(-1, post.n_params)]
        return post

    def state(self) -> dict:
        """Everything needed to reconstruct the posterior exactly."""
        return {
            "n_params": self.n_params,
            "rank": self.rank,
            "n_snapshots": self.n_snapshots,
            "shift": None if self._shift is None else self._shift.copy(),
            "sum_d": self._sum_d.copy(),
            "sumsq_d": self._sumsq_d.copy(),
            "deviations": self.deviations,
        }

    def collect(self, theta: np.ndarray) -> None:
        t = np.asarray(theta, dtype=np.float64)
        if t.shape != (self.n_params,):
            raise ValueError("snapshot has the wrong number of parameters")
        if self._shift is None:
            self._shift = t.copy()
        self.n_snapshots += 1
        d = t - self._shift
        self._sum_d += d
        self._sumsq_d += d * d
        if self.rank > 0:
            self._dev.append((t - self.mean).astype(np.float32))
            if len(self._dev) > self.rank:
                self._dev.pop(0)

    @property
    def mean(self) -> np.ndarray:
        if self.n_snapshots == 0:
            raise ValueError("no snapshots collected")
        return self._shift + self._sum_d / self.n_snapshots

    @property
    def diag_variance(self) -> np.ndarray:
        md = self._sum_d / self.n_snapshots
        return np.maximum(self._sumsq_d / self.n_snapshots - md**2, 0.0)

    @property
    def second_moment(self) -> np.ndarray:
        return self.diag_variance + self.mean**2

    @property
    def rank_used(self) -> int:
        return len(self._dev)

    @property
    def deviations(self) -> np.ndarray:
        """(rank_used, n_params) float32, oldest row first."""
        if not self._dev:
            return np.zeros((0, self.n_params), dtype=np.float32)
        return np.stack(self._dev)

    def draw(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        """One parameter vector from the fitted Gaussian.

        theta = mean + (scale/sqrt(2)) * sigma_diag * z1
                     + (scale/sqrt(2(r-1))) * D^T z2
        The low-rank term is skipped (with a warning at fit time) when
        fewer than 2 deviation columns exist.
        """
        z1 = rng.standard_normal(self.n_params)
        theta = self.mean + (scale / np.sqrt(2.0)) * np.sqrt(self.diag_variance) * z1
        r = self.rank_used
        if r >= 2:
            z2 = rng.standard_normal(r)
            theta = theta + (scale / np.sqrt(2.0 * (r - 1))) * (z2 @ self.deviations)
        return theta

    def covariance_target(self) -> np.ndarray:
        """Dense covariance the draws should realize (test/diagnostic use)."""
        d = self.deviations.astype(np.float64)
        cov = np.diag(self.diag_variance) / 2.0
        r = self.rank_used
        if r >= 2:
            cov = cov + (d.T @ d) / (2.0 * (r - 1))
        return cov


def swag_fit(
    model: FlowMapModel,
    dataset,
    config: SwagConfig | None = None,
    rng_seed: int = 0,
) -> SwagPosterior:
    """Collect SGD snapshots around a trained model; the model is untouched.

    Runs constant-rate SGD with momentum and weight decay from a copy of
    the trained parameters, snapshotting every ``snapshot_every`` steps
    until ``n_snapshots`` are collected.
    """
    if config is None:
        config = SwagConfig()
    work = model.copy()
    work.bind_dataset(dataset)
    x64, c64, y64 = dataset.training_arrays()
    if x64.shape[0] == 0:
        raise ValueError("dataset has no valid training samples")
    x = x64.astype(np.float32)
    c = c64.astype(np.float32)
    y = y64.astype(np.float32)
    n = x.shape[0]
    batch_size = max(1, min(config.batch_size, n))
    rng = np.random.default_rng(rng_seed)
    posterior = SwagPosterior(work.param_count, config.rank)
    velocity = [[np.zeros_like(w), np.zeros_like(b)] for w, b in work.params]
    use_dropout = work.config.dropout.mode != "none"
    perm = np.empty(0, dtype=np.int64)
    pos = n
    step = 0
    while posterior.n_snapshots < config.n_snapshots:
        if pos + batch_size > n:
            perm = rng.permutation(n)
            pos = 0
        idx = perm[pos : pos + batch_size]
        pos += batch_size
        masks = draw_masks(work.config, idx.size, rng) if use_dropout else None
        loss, grads = loss_and_grads(work, x[idx], c[idx], y[idx], masks)
        if not np.isfinite(loss):
            raise RuntimeError(f"SGD diverged at snapshot step {step}: loss={loss!r}")
        for pair, g, v in zip(work.params, grads, velocity):
            for k in range(2):
                gk = g[k] + np.float32(config.weight_decay) * pair[k]
                v[k] *= np.float32(config.momentum)
                v[k] += gk
                pair[k] -= np.float32(config.swag_lr) * v[k]
        step += 1
        if step % config.snapshot_every == 0:
            posterior.collect(work.flat_params().astype(np.float64))
    if config.rank > 0 and posterior.rank_used < 2:
        warnings.warn(
            "fewer than 2 deviation columns collected; draws fall back "
            "to the diagonal covariance only",
            stacklevel=2,
        )
    return posterior


def swag_sample_trajectories(
    model: FlowMapModel,
    posterior: SwagPosterior,
    seeds,
    n_members: int,
    rng_seed: int,
    n_steps: int | None = None,
    scale: float = 1.0,
    mean_mode: str = "base",
) -> list[TrajectoryEnsemble]:
    """Ensembles from posterior parameter draws.

    Member k swaps in the parameters drawn from default_rng([rng_seed, k])
    and predicts every seed's path; the mean path comes from the
    unperturbed base model (or the member average).
    """
    _require_binding(model)
    if n_members < 2:
        raise ValueError("n_members must be >= 2")
    if mean_mode not in ("base", "member_average"):
        raise ValueError(f"unknown mean_mode {mean_mode!r}")
    if posterior.n_params != model.param_count:
        raise ValueError("posterior does not match the model's parameter count")
    seeds = _as_seed_block(seeds)
    if n_steps is None:
        n_steps = model.n_cycles - 1
    s = seeds.shape[0]
    member_paths = np.empty((n_members, s, n_steps + 1, 3))
    sampled = model.copy()
    for k in range(n_members):
        rng = np.random.default_rng([rng_seed, k])
        sampled.set_flat(posterior.draw(rng, scale=scale).astype(np.float32))
        member_paths[k] = _predicted_paths(sampled, seeds, n_steps)
    if mean_mode == "base":
        mean = _predicted_paths(model, seeds, n_steps)
    else:
        mean = member_paths.mean(axis=0)
        mean[:, 0] = seeds
    return [
        TrajectoryEnsemble(seeds[j], model.delta, mean[j], member_paths[:, j], "swag")
        for j in range(s)
    ]
