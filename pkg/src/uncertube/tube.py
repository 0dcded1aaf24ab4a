"""Superelliptical uncertainty tube construction.

The granular operations (project, covariance, superellipse, align) are
the readable reference path and the public geometry API. The meshing
engine runs the same math through a fused kernel: a compiled extension
when available, else the numpy fallback in ``_kernel_py``. Both kernels
share one contract, and per-tube outputs depend only on per-tube inputs
so parallel and serial runs are bitwise identical.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import multiprocessing
import numpy as np

from . import _kernel_py
from .uq import TrajectoryEnsemble

__all__ = [
    "ProjectedRing",
    "PlaneCovariance",
    "SuperellipseRing",
    "AlignmentResult",
    "RingStats",
    "TubeParams",
    "TubeMesh",
    "ring_cloud",
    "project_ring",
    "plane_covariance",
    "build_superellipse",
    "align_rings",
    "ring_stats",
    "build_tube",
    "build_tubes",
    "available_backends",
    "resolve_backend",
]

_Z = np.array([0.0, 0.0, 1.0])
_X = np.array([1.0, 0.0, 0.0])


def _unit(vec: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(vec)
    if n == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return vec / n


def plane_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Right-handed in-plane basis (u, v) perpendicular to ``direction``.

    u = direction x z-axis, falling back to the x-axis when direction is
    within ~1e-6 of +-z; v = direction x u.
    """
    d = np.asarray(direction, dtype=np.float64)
    u = np.cross(d, _Z)
    if np.linalg.norm(u) < 1e-6:
        u = np.cross(d, _X)
    u = _unit(u)
    return u, np.cross(d, u)


@dataclass(frozen=True)
class ProjectedRing:
    """A ring cloud projected onto the plane normal to the step direction."""

    t_index: int
    center: np.ndarray        # (3,) cloud mean, lies in the plane
    direction: np.ndarray     # (3,) unit plane normal
    basis_u: np.ndarray       # (3,)
    basis_v: np.ndarray       # (3,)
    points: np.ndarray        # (K, 3) projected cloud
    plane_coords: np.ndarray  # (K, 2) coordinates in (u, v)


def ring_cloud(ensemble: TrajectoryEnsemble, t_index: int, include_mean: bool = True) -> np.ndarray:
    """(K', 3) positions feeding ring ``t_index`` of the tube."""
    if not 0 <= t_index <= ensemble.n_steps:
        raise ValueError(f"t_index must be in [0, {ensemble.n_steps}]")
    pts = ensemble.members[:, t_index]
    if include_mean:
        pts = np.concatenate([pts, ensemble.mean_path[None, t_index]], axis=0)
    return np.asarray(pts, dtype=np.float64)


def project_ring(
    points,
    prev_center,
    t_index: int = 1,
    fallback_direction=None,
) -> ProjectedRing:
    """Project a ring cloud onto the plane through its mean.

    The plane normal is the unit vector from ``prev_center`` to the
    cloud mean; when the two nearly coincide the caller's
    ``fallback_direction`` (or +z) keeps the tube moving.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (K, 3), got {pts.shape}")
    center = pts.mean(axis=0)
    step = center - np.asarray(prev_center, dtype=np.float64)
    if np.linalg.norm(step) < 1e-12 * (1.0 + np.linalg.norm(center)):
        d = _Z if fallback_direction is None else _unit(np.asarray(fallback_direction, float))
    else:
        d = _unit(step)
    u, v = plane_basis(d)
    w = pts - center
    proj = pts - (w @ d)[:, None] * d
    coords = np.stack([w @ u, w @ v], axis=1)
    return ProjectedRing(t_index, center, d, u, v, proj, coords)


@dataclass(frozen=True)
class PlaneCovariance:
    """2x2 population covariance of the plane coordinates, eigen-resolved.

    ``eigenvalues`` descend; ``eigenvectors`` holds unit columns with the
    leading one sign-fixed to a nonnegative u component (v on ties), the
    second its 90-degree rotation, so the pair is always a rotation.
    """

    matrix: np.ndarray       # (2, 2)
    eigenvalues: np.ndarray  # (2,) lam1 >= lam2 >= 0
    eigenvectors: np.ndarray  # (2, 2) columns e1, e2
    axes_world: np.ndarray   # (2, 3) eigvectors lifted through (u, v)


def plane_covariance(ring: ProjectedRing) -> PlaneCovariance:
    """Population (1/K) covariance of a projected ring with closed-form eig."""
    xy = ring.plane_coords - ring.plane_coords.mean(axis=0)
    k = xy.shape[0]
    a = float(xy[:, 0] @ xy[:, 0]) / k
    b = float(xy[:, 0] @ xy[:, 1]) / k
    c = float(xy[:, 1] @ xy[:, 1]) / k
    disc = np.sqrt((a - c) ** 2 + 4.0 * b * b)
    lam1 = max(0.5 * ((a + c) + disc), 0.0)
    lam2 = max(0.5 * ((a + c) - disc), 0.0)
    if b == 0.0:
        e1 = np.array([1.0, 0.0]) if a >= c else np.array([0.0, 1.0])
    else:
        cand1 = np.array([b, lam1 - a])
        cand2 = np.array([lam1 - c, b])
        e1 = cand2 if np.linalg.norm(cand2) >= np.linalg.norm(cand1) else cand1
        e1 = _unit(e1)
    if e1[0] < 0.0 or (e1[0] == 0.0 and e1[1] < 0.0):
        e1 = -e1
    e2 = np.array([-e1[1], e1[0]])
    axes = np.stack(
        [
            e1[0] * ring.basis_u + e1[1] * ring.basis_v,
            e2[0] * ring.basis_u + e2[1] * ring.basis_v,
        ]
    )
    return PlaneCovariance(
        matrix=np.array([[a, b], [b, c]]),
        eigenvalues=np.array([lam1, lam2]),
        eigenvectors=np.stack([e1, e2], axis=1),
        axes_world=axes,
    )


@dataclass(frozen=True)
class SuperellipseRing:
    """Sampled superellipse boundary in world space.

    ``radii`` are the (possibly clamped) semi-axes a1 >= 0, a2 >= 0 of
    |x/a1|^tau + |y/a2|^tau = 1 in the eigenframe.
    """

    center: np.ndarray    # (3,)
    tau: float
    radii: np.ndarray     # (2,)
    boundary: np.ndarray  # (m, 3)
    axes_world: np.ndarray  # (2, 3)

    @property
    def n_samples(self) -> int:
        return self.boundary.shape[0]


def superellipse_profile(theta, tau: float) -> np.ndarray:
    """Unit-radii superellipse samples (cos/sin raised to 2/tau, signed)."""
    ct, st = np.cos(theta), np.sin(theta)
    return np.stack(
        [
            np.abs(ct) ** (2.0 / tau) * np.sign(ct),
            np.abs(st) ** (2.0 / tau) * np.sign(st),
        ],
        axis=-1,
    )


def build_superellipse(
    ring: ProjectedRing,
    cov: PlaneCovariance,
    tau: float = 4.0,
    n_samples: int = 32,
    radius_convention: str = "stddev",
    clamp: float = 0.0,
) -> SuperellipseRing:
    """Sample the covariance-fitted superellipse at n equispaced angles.

    Semi-axes are twice the eigen radii (standard deviations by default,
    raw eigenvalues with ``radius_convention="eigenvalue"``), floored at
    ``clamp`` so degenerate rings still mesh. tau = 2 gives the exact
    ellipse; larger tau squares the profile off.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if n_samples < 3:
        raise ValueError("n_samples must be >= 3")
    if radius_convention not in ("stddev", "eigenvalue"):
        raise ValueError(f"unknown radius convention {radius_convention!r}")
    lam = cov.eigenvalues
    r = np.sqrt(lam) if radius_convention == "stddev" else lam
    radii = np.maximum(2.0 * r, clamp)
    theta = 2.0 * np.pi * np.arange(n_samples) / n_samples
    prof = superellipse_profile(theta, tau) * radii
    plane = prof @ cov.eigenvectors.T
    boundary = (
        ring.center
        + plane[:, 0, None] * ring.basis_u
        + plane[:, 1, None] * ring.basis_v
    )
    return SuperellipseRing(ring.center.copy(), float(tau), radii, boundary, cov.axes_world)


@dataclass(frozen=True)
class AlignmentResult:
    """Outcome of matching a ring's sample order to its predecessor.

    Candidate (s, r=0) maps sample j to next[(j+s) mod m]; r=1 first
    reverses via rev[i] = next[(m-i) mod m]. ``score`` is the summed
    point distance of the winner; ties pick the smallest s, then r=0.
    """

    shift: int
    reverse: bool
    score: float
    boundary: np.ndarray  # (m, 3) reordered samples


def align_rings(prev_boundary, next_boundary) -> AlignmentResult:
    """Exhaustive search over all 2m vertex-order candidates."""
    prev_b = np.asarray(prev_boundary, dtype=np.float64)
    next_b = np.asarray(next_boundary, dtype=np.float64)
    if prev_b.shape != next_b.shape or prev_b.ndim != 2 or prev_b.shape[1] != 3:
        raise ValueError("boundaries must share one (m, 3) shape")
    m = prev_b.shape[0]
    shift_idx = (np.arange(m)[:, None] + np.arange(m)[None, :]) % m
    c0 = next_b[shift_idx]
    c1 = next_b[(m - np.arange(m)) % m][shift_idx]
    d0 = np.linalg.norm(c0 - prev_b[None], axis=2).sum(axis=1)
    d1 = np.linalg.norm(c1 - prev_b[None], axis=2).sum(axis=1)
    scores = np.stack([d0, d1], axis=1).ravel()
    best = int(np.argmin(scores))  # first minimum: smallest s, then r=0
    s, r = divmod(best, 2)
    return AlignmentResult(s, bool(r), float(scores[best]), c1[s] if r else c0[s])


@dataclass(frozen=True)
class RingStats:
    """Per-ring uncertainty summary driving the colormap."""

    magnitude: np.ndarray  # (N,) leading radius per the convention
    symmetry: np.ndarray   # (N,) trailing/leading radius ratio in [0, 1]


def ring_stats(lam1, lam2, radius_convention: str = "stddev") -> RingStats:
    """Magnitude and symmetry from per-ring covariance eigenvalues."""
    lam1 = np.asarray(lam1, dtype=np.float64)
    lam2 = np.asarray(lam2, dtype=np.float64)
    if radius_convention == "stddev":
        r1, r2 = np.sqrt(lam1), np.sqrt(lam2)
    elif radius_convention == "eigenvalue":
        r1, r2 = lam1, lam2
    else:
        raise ValueError(f"unknown radius convention {radius_convention!r}")
    sym = np.ones_like(r1)
    pos = r1 > 0.0
    sym[pos] = r2[pos] / r1[pos]
    return RingStats(magnitude=r1, symmetry=sym)


@dataclass(frozen=True)
class TubeParams:
    """Knobs shared by every tube in one build."""

    tau: float = 4.0
    ring_samples: int = 32
    radius_convention: str = "stddev"
    include_mean: bool = True
    end_cap: bool = False
    clamp_factor: float = 1e-6  # of the per-tube cloud diagonal

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.ring_samples < 3:
            raise ValueError("ring_samples must be >= 3")
        if self.radius_convention not in ("stddev", "eigenvalue"):
            raise ValueError(f"unknown radius convention {self.radius_convention!r}")
        if self.clamp_factor < 0:
            raise ValueError("clamp_factor must be >= 0")


@dataclass
class TubeMesh:
    """Triangle mesh for one seed's uncertainty tube.

    Layout: vertex 0 is the seed apex, then N rings of ``ring_samples``
    vertices each. ``colors`` stays None until the colormap stage fills
    RGBA rows in [0, 1].
    """

    seed: np.ndarray      # (3,)
    vertices: np.ndarray  # (V, 3) float64
    normals: np.ndarray   # (V, 3) float64
    uvs: np.ndarray       # (V, 2) float64
    indices: np.ndarray   # (T, 3) uint32
    ring_samples: int
    n_rings: int
    stats: RingStats
    colors: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.indices.shape[0]


def _python_kernel():
    return _kernel_py.tube_kernel


def _compiled_kernel():
    from . import _tubekernel  # built optionally at install time

    return _tubekernel.tube_kernel


def available_backends() -> list[str]:
    out = ["python"]
    try:
        _compiled_kernel()
        out.insert(0, "compiled")
    except ImportError:
        pass
    return out


def resolve_backend(name: str | None = None) -> tuple[str, object]:
    """Kernel lookup honoring the UT_BACKEND environment override."""
    name = name or os.environ.get("UT_BACKEND", "auto")
    if name == "python":
        return "python", _python_kernel()
    if name == "compiled":
        return "compiled", _compiled_kernel()
    if name != "auto":
        raise ValueError(f"unknown backend {name!r} (auto, compiled, python)")
    try:
        return "compiled", _compiled_kernel()
    except ImportError:
        return "python", _python_kernel()


def build_tube(
    ensemble: TrajectoryEnsemble,
    params: TubeParams = TubeParams(),
    backend: str | None = None,
) -> TubeMesh:
    """Mesh one ensemble into its uncertainty tube."""
    cloud = np.ascontiguousarray(ensemble.members, dtype=np.float64)
    if params.include_mean:
        cloud = np.concatenate([cloud, ensemble.mean_path[None]], axis=0)
    span = cloud.reshape(-1, 3)
    diag = float(np.linalg.norm(span.max(axis=0) - span.min(axis=0)))
    clamp = params.clamp_factor * (diag if diag > 0.0 else 1.0)
    _, kernel = resolve_backend(backend)
    verts, normals, uvs, indices, lam1, lam2 = kernel(
        cloud,
        float(params.tau),
        int(params.ring_samples),
        params.radius_convention == "stddev",
        clamp,
        bool(params.end_cap),
    )
    return TubeMesh(
        seed=ensemble.seed.copy(),
        vertices=verts,
        normals=normals,
        uvs=uvs,
        indices=indices,
        ring_samples=params.ring_samples,
        n_rings=ensemble.n_steps,
        stats=ring_stats(lam1, lam2, params.radius_convention),
    )


def _worker_count(workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("UT_WORKERS")
        workers = int(env) if env else (os.cpu_count() or 1)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    return workers


def build_tubes(
    ensembles: list[TrajectoryEnsemble],
    params: TubeParams = TubeParams(),
    workers: int | None = 1,
    backend: str | None = None,
) -> list[TubeMesh]:
    """Mesh many ensembles, optionally in parallel.

    Tubes are independent, so the engine fans them out across threads
    (compiled kernel, which releases the GIL) or forked processes
    (python kernel). Output order matches input order and every tube is
    bitwise identical to a serial build.
    """
    workers = _worker_count(workers)
    kind, _ = resolve_backend(backend)
    if workers == 1 or len(ensembles) < 2:
        return [build_tube(e, params, backend) for e in ensembles]
    job = partial(build_tube, params=params, backend=backend)
    if kind == "compiled":
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(job, ensembles))
    chunk = max(1, len(ensembles) // (workers * 4))
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(job, ensembles, chunksize=chunk))
