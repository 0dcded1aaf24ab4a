"""Pure-numpy tube meshing kernel.

Fallback backend behind the same array contract as the compiled kernel:
one call turns a ring cloud of K paths over N steps into mesh buffers
plus the per-ring covariance eigenvalues. All math is float64 and the
output depends only on the inputs.
"""

from __future__ import annotations

import numpy as np

Z_AXIS = np.array([0.0, 0.0, 1.0])
X_AXIS = np.array([1.0, 0.0, 0.0])


def tube_kernel(
    cloud: np.ndarray,
    tau: float,
    m: int,
    use_stddev: bool,
    clamp: float,
    end_cap: bool,
):
    """Mesh one ring cloud.

    cloud: (K, N+1, 3) float64, paths that all agree at index 0.
    Returns (vertices, normals, uvs, indices, lam1, lam2) where the
    vertex layout is [apex, ring 1 .. ring N] with m samples per ring
    and lam1 >= lam2 >= 0 are the per-ring plane covariance eigenvalues.
    """
    cloud = np.ascontiguousarray(cloud, dtype=np.float64)
    k, n1, _ = cloud.shape
    n = n1 - 1
    centers = cloud.mean(axis=0)
    centers[0] = cloud[0, 0]  # paths coincide at the seed; keep it exact

    # Step directions with the stationary fallback: reuse the previous
    # direction when the center barely moves, +z before any movement.
    diff = centers[1:] - centers[:-1]
    norms = np.linalg.norm(diff, axis=1)
    tol = 1e-12 * (1.0 + np.linalg.norm(centers[1:], axis=1))
    dirs = np.empty_like(diff)
    prev = Z_AXIS
    for t in range(n):
        if norms[t] < tol[t]:
            dirs[t] = prev
        else:
            dirs[t] = diff[t] / norms[t]
            prev = dirs[t]

    u = np.cross(dirs, Z_AXIS)
    un = np.linalg.norm(u, axis=1)
    nearly_z = un < 1e-6
    if nearly_z.any():
        u[nearly_z] = np.cross(dirs[nearly_z], X_AXIS)
        un = np.linalg.norm(u, axis=1)
    u /= un[:, None]
    v = np.cross(dirs, u)

    # In-plane coordinates of every path point relative to the ring center.
    w = cloud[:, 1:, :] - centers[None, 1:, :]
    xi = np.einsum("ktc,tc->kt", w, u)
    eta = np.einsum("ktc,tc->kt", w, v)
    xi = xi - xi.mean(axis=0)
    eta = eta - eta.mean(axis=0)
    ca = np.mean(xi * xi, axis=0)
    cb = np.mean(xi * eta, axis=0)
    cc = np.mean(eta * eta, axis=0)

    tr = ca + cc
    disc = np.sqrt((ca - cc) ** 2 + 4.0 * cb * cb)
    lam1 = np.maximum(0.5 * (tr + disc), 0.0)
    lam2 = np.maximum(0.5 * (tr - disc), 0.0)

    # Leading eigenvector from whichever closed form is better conditioned;
    # sign fixed to a nonnegative u component (v component on ties).
    cand1 = np.stack([cb, lam1 - ca], axis=1)
    cand2 = np.stack([lam1 - cc, cb], axis=1)
    n1_ = np.linalg.norm(cand1, axis=1)
    n2_ = np.linalg.norm(cand2, axis=1)
    e1 = np.where((n2_ >= n1_)[:, None], cand2, cand1)
    en = np.linalg.norm(e1, axis=1)
    diag = cb == 0.0
    e1[diag] = np.where((ca >= cc)[diag, None], [1.0, 0.0], [0.0, 1.0])
    en[diag] = 1.0
    zero = en == 0.0
    e1[zero] = [1.0, 0.0]
    en[zero] = 1.0
    e1 /= en[:, None]
    flip = (e1[:, 0] < 0.0) | ((e1[:, 0] == 0.0) & (e1[:, 1] < 0.0))
    e1[flip] *= -1.0
    e2 = np.stack([-e1[:, 1], e1[:, 0]], axis=1)

    r1 = np.sqrt(lam1) if use_stddev else lam1
    r2 = np.sqrt(lam2) if use_stddev else lam2
    a1 = np.maximum(2.0 * r1, clamp)
    a2 = np.maximum(2.0 * r2, clamp)

    theta = 2.0 * np.pi * np.arange(m) / m
    ct, st = np.cos(theta), np.sin(theta)
    cp = np.abs(ct) ** (2.0 / tau) * np.sign(ct)
    sp = np.abs(st) ** (2.0 / tau) * np.sign(st)
    ex = a1[:, None] * cp[None, :]
    ey = a2[:, None] * sp[None, :]
    px = ex * e1[:, 0, None] + ey * e2[:, 0, None]
    py = ex * e1[:, 1, None] + ey * e2[:, 1, None]
    pts = (
        centers[1:, None, :]
        + px[:, :, None] * u[:, None, :]
        + py[:, :, None] * v[:, None, :]
    )

    # Align each ring to its aligned predecessor over all m shifts and
    # both orientations; ties go to the smallest shift, then unreversed.
    shift_idx = (np.arange(m)[:, None] + np.arange(m)[None, :]) % m
    rev_idx = (m - np.arange(m)) % m
    for t in range(1, n):
        ring = pts[t]
        c0 = ring[shift_idx]
        c1 = ring[rev_idx][shift_idx]
        d0 = np.linalg.norm(c0 - pts[t - 1][None], axis=2).sum(axis=1)
        d1 = np.linalg.norm(c1 - pts[t - 1][None], axis=2).sum(axis=1)
        scores = np.stack([d0, d1], axis=1).ravel()
        best = int(np.argmin(scores))
        s, r = divmod(best, 2)
        pts[t] = c1[s] if r else c0[s]

    n_verts = 1 + n * m
    verts = np.empty((n_verts, 3))
    verts[0] = centers[0]
    verts[1:] = pts.reshape(n * m, 3)

    uvs = np.empty((n_verts, 2))
    uvs[0] = 0.0
    uvs[1:, 0] = np.repeat(np.arange(1, n + 1) / n, m)
    uvs[1:, 1] = np.tile(np.arange(m) / m, n)

    j = np.arange(m, dtype=np.uint32)
    jn = (j + 1) % m
    fan = np.stack([np.zeros(m, dtype=np.uint32), 1 + jn, 1 + j], axis=1)
    tris = [fan]
    for t in range(n - 1):
        base = np.uint32(1 + t * m)
        a = base + j
        b = base + jn
        c = base + m + jn
        d = base + m + j
        quad = np.empty((2 * m, 3), dtype=np.uint32)
        quad[0::2] = np.stack([a, b, c], axis=1)
        quad[1::2] = np.stack([a, c, d], axis=1)
        tris.append(quad)
    if end_cap and m > 2:
        base = np.uint32(1 + (n - 1) * m)
        jj = np.arange(1, m - 1, dtype=np.uint32)
        tris.append(np.stack([np.full(m - 2, base), base + jj, base + jj + 1], axis=1))
    indices = np.concatenate(tris, axis=0).astype(np.uint32)

    tp = verts[indices]
    fn = np.cross(tp[:, 1] - tp[:, 0], tp[:, 2] - tp[:, 0])
    fl = np.linalg.norm(fn, axis=1)
    ok = fl > 0.0
    fn[ok] /= fl[ok, None]
    fn[~ok] = 0.0
    acc = np.zeros_like(verts)
    np.add.at(acc, indices.ravel(), np.repeat(fn, 3, axis=0))
    al = np.linalg.norm(acc, axis=1)
    deg = al == 0.0
    acc[deg] = Z_AXIS
    al[deg] = 1.0
    normals = acc / al[:, None]

    return verts, normals, uvs, indices, lam1, lam2
