"""Analytic vector fields, seed generation, and pathline tracing.

Everything here works in plain float64 numpy and is deterministic: the
same inputs always produce the same trajectories, which the rest of the
pipeline relies on.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VectorField",
    "synth_field",
    "tornado_field",
    "sobol_points",
    "generate_seeds",
    "trace_pathline",
    "trace_pathlines",
    "CoordinateScaling",
    "FlowMapDataset",
    "build_dataset",
    "normalize_cycles",
]

_SOBOL_BITS = 32


def _as_box(box) -> np.ndarray:
    """Coerce to a (3, 2) float64 min/max box and validate it."""
    b = np.asarray(box, dtype=np.float64)
    if b.shape != (3, 2):
        raise ValueError(f"box must have shape (3, 2), got {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ValueError("box contains non-finite values")
    if np.any(b[:, 0] >= b[:, 1]):
        raise ValueError("box must satisfy min < max on every axis")
    return b


@dataclass(frozen=True)
class VectorField:
    """A time-dependent velocity field on a rectangular domain.

    ``kind`` selects the analytic formula, ``params`` its constants. The
    formulas are defined on all of R^3; ``domain`` only decides when a
    traced particle is considered to have left the region of interest.
    """

    kind: str
    params: dict
    domain: np.ndarray
    time_range: tuple[float, float] = (0.0, 10.0)

    def __post_init__(self):
        object.__setattr__(self, "domain", _as_box(self.domain))
        if self.kind not in ("synth", "tornado"):
            raise ValueError(f"unknown field kind {self.kind!r}")

    def evaluate(self, points, t: float) -> np.ndarray:
        """Velocity at ``points`` (..., 3) and scalar time ``t``."""
        p = np.asarray(points, dtype=np.float64)
        if p.shape[-1] != 3:
            raise ValueError(f"points must have trailing dimension 3, got {p.shape}")
        t = float(t)
        x, y, z = p[..., 0], p[..., 1], p[..., 2]
        q = self.params
        out = np.empty_like(p)
        if self.kind == "synth":
            amp = q["a0"] * (z + 1.0)
            out[..., 0] = amp * np.sin(q["omega"] * (z + y) + q["phi"] * t)
            out[..., 1] = amp * np.cos(q["omega"] * (z + x) + q["phi"] * t)
            out[..., 2] = q["c"]
        else:  # tornado
            wob = q["wobble_z"] * z + q["wobble_t"] * t
            cx = q["wobble_amp"] * np.sin(wob)
            cy = q["wobble_amp"] * np.cos(wob)
            dx, dy = x - cx, y - cy
            f = 1.0 / (dx * dx + dy * dy + q["core_radius"] ** 2)
            out[..., 0] = (-q["swirl"] * dy - q["inflow"] * dx) * f
            out[..., 1] = (q["swirl"] * dx - q["inflow"] * dy) * f
            out[..., 2] = q["updraft"] * q["core_radius"] ** 2 * f
        return out

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the closed domain box."""
        p = np.asarray(points, dtype=np.float64)
        lo, hi = self.domain[:, 0], self.domain[:, 1]
        return np.all((p >= lo) & (p <= hi), axis=-1)


def synth_field(
    a0: float = 0.25,
    omega: float = 5.0,
    phi: float = 2.0,
    c: float = 0.18,
) -> VectorField:
    """Helical test flow on [-1, 1]^3 with z-growing swirl amplitude.

    The amplitude a0 * (z + 1) vanishes at the bottom of the domain and
    grows linearly with height, and the swirl phase couples the
    horizontal coordinates, so rising particles wander chaotically and
    the flow map gets genuinely harder to learn with height.
    """
    return VectorField(
        kind="synth",
        params={"a0": a0, "omega": omega, "phi": phi, "c": c},
        domain=np.array([[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]]),
        time_range=(0.0, 12.0),
    )


def tornado_field(
    swirl: float = 8.0,
    core_radius: float = 1.0,
    updraft: float = 1.0,
    inflow: float = 0.6,
    wobble_amp: float = 0.8,
    wobble_z: float = 0.4,
    wobble_t: float = 0.3,
) -> VectorField:
    """Precessing vortex on [-5, 5]^2 x [-10, 10].

    Tangential speed peaks near the wandering core and decays with the
    squared distance from it; a weak inflow pulls particles toward the
    core while the updraft lifts them.
    """
    return VectorField(
        kind="tornado",
        params={
            "swirl": swirl,
            "core_radius": core_radius,
            "updraft": updraft,
            "inflow": inflow,
            "wobble_amp": wobble_amp,
            "wobble_z": wobble_z,
            "wobble_t": wobble_t,
        },
        domain=np.array([[-5.0, 5.0], [-5.0, 5.0], [-10.0, 10.0]]),
        time_range=(0.0, 10.0),
    )


def _sobol_direction_vectors(dim: int) -> np.ndarray:
    """32-bit direction vectors for the first three dimensions.

    Dimension 1 is the van der Corput sequence; dimensions 2 and 3 use
    the primitive polynomials x+1 (s=1, a=0, m=[1]) and x^2+x+1
    (s=2, a=1, m=[1, 3]).
    """
    if dim < 1 or dim > 3:
        raise ValueError(f"sobol dimensions supported: 1..3, got {dim}")
    nbits = _SOBOL_BITS
    vs = np.zeros((dim, nbits), dtype=np.uint64)
    m = [1] * nbits
    vs[0] = [np.uint64(m[j] << (nbits - 1 - j)) for j in range(nbits)]
    if dim >= 2:
        m = [0] * nbits
        m[0] = 1
        for k in range(1, nbits):
            m[k] = (2 * m[k - 1]) ^ m[k - 1]
        vs[1] = [np.uint64(m[j] << (nbits - 1 - j)) for j in range(nbits)]
    if dim >= 3:
        m = [0] * nbits
        m[0], m[1] = 1, 3
        for k in range(2, nbits):
            m[k] = (2 * m[k - 1]) ^ (4 * m[k - 2]) ^ m[k - 2]
        vs[2] = [np.uint64(m[j] << (nbits - 1 - j)) for j in range(nbits)]
    return vs


def sobol_points(count: int, dim: int = 3, skip: int = 1) -> np.ndarray:
    """First ``count`` Sobol points in [0, 1)^dim after dropping ``skip``.

    Gray-code construction: the state for index i differs from index i-1
    in exactly one direction vector, and vectorizing over the bits of the
    Gray code i ^ (i >> 1) reproduces the same points order-independently.
    The default skip of 1 drops the all-zeros point at the origin.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if skip < 0:
        raise ValueError("skip must be >= 0")
    total = count + skip
    if total >= 1 << _SOBOL_BITS:
        raise ValueError("sequence index exceeds 32-bit generator range")
    vs = _sobol_direction_vectors(dim)
    idx = np.arange(skip, total, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    state = np.zeros((count, dim), dtype=np.uint64)
    for b in range(_SOBOL_BITS):
        hasbit = ((gray >> np.uint64(b)) & np.uint64(1)).astype(bool)
        if not hasbit.any():
            continue
        state[hasbit] ^= vs[:, b]
    return state.astype(np.float64) * 2.0**-_SOBOL_BITS


def _grid_points(count: int) -> np.ndarray:
    side = int(np.ceil(count ** (1.0 / 3.0)))
    while side**3 < count:
        side += 1
    axis = (np.arange(side, dtype=np.float64) + 0.5) / side
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    return pts[:count]


def generate_seeds(
    box,
    count: int,
    generator: str = "sobol",
    rng_seed: int = 0,
    skip: int = 1,
) -> np.ndarray:
    """Seed positions inside ``box`` from one of the supported generators.

    ``sobol`` is the low-discrepancy default, ``uniform_grid`` a cell-center
    lattice, ``pseudo_random`` plain uniform draws seeded by ``rng_seed``.
    """
    b = _as_box(box)
    if count < 1:
        raise ValueError("count must be >= 1")
    if generator == "sobol":
        unit = sobol_points(count, dim=3, skip=skip)
    elif generator == "uniform_grid":
        unit = _grid_points(count)
    elif generator == "pseudo_random":
        unit = np.random.default_rng(rng_seed).random((count, 3))
    else:
        raise ValueError(f"unknown seed generator {generator!r}")
    return b[:, 0] + unit * (b[:, 1] - b[:, 0])


def trace_pathlines(
    field: VectorField,
    seeds,
    t0: float,
    n_steps: int,
    delta: float,
    method: str = "rk4",
) -> tuple[np.ndarray, np.ndarray]:
    """Advect ``seeds`` through ``field`` for ``n_steps`` fixed steps.

    Returns ``(paths, valid)`` with shapes (M, n_steps + 1, 3) and
    (M, n_steps + 1). A particle that leaves the domain box is frozen at
    its last in-domain position and its remaining samples are flagged
    invalid; position 0 is the seed itself.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    if seeds.ndim != 2 or seeds.shape[1] != 3:
        raise ValueError(f"seeds must have shape (M, 3), got {seeds.shape}")
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if not (np.isfinite(delta) and delta > 0):
        raise ValueError("delta must be a positive finite step size")
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown integrator {method!r}")
    if not field.contains(seeds).all():
        raise ValueError("all seeds must lie inside the field domain")

    m = seeds.shape[0]
    paths = np.empty((m, n_steps + 1, 3), dtype=np.float64)
    valid = np.ones((m, n_steps + 1), dtype=bool)
    paths[:, 0] = seeds
    pos = seeds.copy()
    alive = np.ones(m, dtype=bool)
    h = float(delta)
    for k in range(n_steps):
        t = t0 + k * h
        if method == "rk4":
            k1 = field.evaluate(pos, t)
            k2 = field.evaluate(pos + 0.5 * h * k1, t + 0.5 * h)
            k3 = field.evaluate(pos + 0.5 * h * k2, t + 0.5 * h)
            k4 = field.evaluate(pos + h * k3, t + h)
            nxt = pos + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            nxt = pos + h * field.evaluate(pos, t)
        inside = field.contains(nxt)
        step_ok = alive & inside
        pos = np.where(step_ok[:, None], nxt, pos)
        alive = step_ok
        paths[:, k + 1] = pos
        valid[:, k + 1] = alive
    return paths, valid


def trace_pathline(
    field: VectorField,
    seed,
    t0: float,
    n_steps: int,
    delta: float,
    method: str = "rk4",
) -> tuple[np.ndarray, np.ndarray]:
    """Single-seed convenience wrapper around :func:`trace_pathlines`."""
    paths, valid = trace_pathlines(field, [seed], t0, n_steps, delta, method)
    return paths[0], valid[0]


@dataclass(frozen=True)
class CoordinateScaling:
    """Affine map between domain coordinates and the normalized cube.

    ``normalized = (x - offset) / scale`` per axis. In ``bounding_box``
    mode each axis maps to [-1, 1] independently; ``spatially_uniform``
    divides every axis by the longest half-extent so aspect ratios are
    preserved and only the longest axis reaches +-1.
    """

    mode: str
    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if self.mode not in ("bounding_box", "spatially_uniform"):
            raise ValueError(f"unknown rescale mode {self.mode!r}")
        if self.offset.shape != (3,) or self.scale.shape != (3,):
            raise ValueError("offset and scale must have shape (3,)")
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive on every axis")

    @classmethod
    def from_box(cls, box, mode: str = "bounding_box") -> "CoordinateScaling":
        b = _as_box(box)
        center = 0.5 * (b[:, 0] + b[:, 1])
        half = 0.5 * (b[:, 1] - b[:, 0])
        if mode == "spatially_uniform":
            half = np.full(3, half.max())
        return cls(mode=mode, offset=center, scale=half)

    def normalize(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return (p - self.offset) / self.scale

    def denormalize(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p * self.scale + self.offset


def normalize_cycles(cycles, n_cycles: int) -> np.ndarray:
    """Map integer file cycles 0..n-1 onto [-1, 1] (in f64)."""
    if n_cycles < 2:
        raise ValueError("n_cycles must be >= 2")
    c = np.asarray(cycles, dtype=np.float64)
    return 2.0 * c / (n_cycles - 1.0) - 1.0


@dataclass
class FlowMapDataset:
    """Flow-map training triples over m seeds and n file cycles.

    ``starts`` and ``ends`` are stored in normalized coordinates;
    ``scaling`` recovers domain units. ``valid`` marks samples whose
    particle was still inside the domain (invalid samples are kept in
    the arrays but excluded from training).
    """

    starts: np.ndarray          # (m, 3) normalized seed positions
    ends: np.ndarray            # (m, n, 3) normalized end positions
    cycles: np.ndarray          # (n,) integer file cycles, strictly increasing
    delta: float                # time between consecutive cycles
    scaling: CoordinateScaling
    original_box: np.ndarray    # (3, 2) field domain in original units
    seeding_box: np.ndarray     # (3, 2) seed generation box in original units
    valid: np.ndarray = field(default=None)  # (m, n) bool

    def __post_init__(self):
        self.starts = np.asarray(self.starts, dtype=np.float64)
        self.ends = np.asarray(self.ends, dtype=np.float64)
        self.cycles = np.asarray(self.cycles, dtype=np.int64)
        self.original_box = _as_box(self.original_box)
        self.seeding_box = _as_box(self.seeding_box)
        m, n = self.m_seeds, self.n_cycles
        if self.starts.shape != (m, 3):
            raise ValueError("starts must have shape (m, 3)")
        if self.ends.shape != (m, n, 3):
            raise ValueError("ends must have shape (m, n, 3)")
        if n < 2:
            raise ValueError("dataset needs at least 2 cycles")
        if np.any(np.diff(self.cycles) <= 0):
            raise ValueError("cycles must be strictly increasing")
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError("delta must be positive and finite")
        if self.valid is None:
            self.valid = np.ones((m, n), dtype=bool)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.valid.shape != (m, n):
            raise ValueError("valid mask must have shape (m, n)")

    @property
    def m_seeds(self) -> int:
        return self.starts.shape[0]

    @property
    def n_cycles(self) -> int:
        return self.ends.shape[1]

    @property
    def sample_count(self) -> int:
        return self.m_seeds * self.n_cycles

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened (X, C, Y) with invalid samples dropped.

        X are normalized starts repeated per cycle, C normalized cycles,
        Y normalized ends; all float64, sample index runs seed-major.
        """
        m, n = self.m_seeds, self.n_cycles
        x = np.repeat(self.starts, n, axis=0)
        c = np.tile(normalize_cycles(self.cycles, n), m)
        y = self.ends.reshape(m * n, 3)
        keep = self.valid.reshape(m * n)
        return x[keep], c[keep], y[keep]


def build_dataset(
    field_: VectorField,
    seeds,
    n_cycles: int,
    delta: float,
    rescale: str = "bounding_box",
    t0: float | None = None,
    method: str = "rk4",
    seeding_box=None,
) -> FlowMapDataset:
    """Trace seeds and package the resulting flow-map triples.

    Each seed contributes ``n_cycles`` samples: cycle 0 is the identity
    (end = start) and cycle j the position after j steps of size
    ``delta``. Samples after a domain exit are frozen and flagged.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    if n_cycles < 2:
        raise ValueError("n_cycles must be >= 2")
    if t0 is None:
        t0 = field_.time_range[0]
    paths, valid = trace_pathlines(field_, seeds, t0, n_cycles - 1, delta, method)
    n_exited = int(np.count_nonzero(~valid[:, -1]))
    if n_exited:
        warnings.warn(
            f"{n_exited} of {seeds.shape[0]} seeds left the domain; "
            "their trailing samples are excluded from training",
            stacklevel=2,
        )
    scaling = CoordinateScaling.from_box(field_.domain, rescale)
    if seeding_box is None:
        lo, hi = seeds.min(axis=0), seeds.max(axis=0)
        hi = np.where(hi > lo, hi, lo + 1e-9)
        seeding_box = np.stack([lo, hi], axis=1)
    return FlowMapDataset(
        starts=scaling.normalize(seeds),
        ends=scaling.normalize(paths),
        cycles=np.arange(n_cycles, dtype=np.int64),
        delta=float(delta),
        scaling=scaling,
        original_box=field_.domain,
        seeding_box=seeding_box,
        valid=valid,
    )
