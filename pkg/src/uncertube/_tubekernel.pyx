# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled tube meshing kernel.

Same contract as the numpy fallback in _kernel_py: turn one ring cloud
into mesh buffers and per-ring covariance eigenvalues. The hot loops run
without the GIL so tubes can be meshed on a thread pool.
"""

import numpy as np

from libc.math cimport cos, fabs, pow, sin, sqrt

cdef double PI = 3.141592653589793


cdef inline double _sgn(double x) nogil:
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


def tube_kernel(cloud, double tau, int m, bint use_stddev, double clamp, bint end_cap):
    """Mesh one (K, N+1, 3) float64 ring cloud; see _kernel_py.tube_kernel."""
    cdef double[:, :, ::1] pts = np.ascontiguousarray(cloud, dtype=np.float64)
    cdef Py_ssize_t k = pts.shape[0]
    cdef Py_ssize_t n = pts.shape[1] - 1
    if pts.shape[2] != 3:
        raise ValueError("cloud must have shape (K, N+1, 3)")
    if n < 1 or k < 1 or m < 3:
        raise ValueError("need at least one step, one path, three samples")

    cdef Py_ssize_t n_verts = 1 + n * m
    cdef Py_ssize_t n_tris = m + 2 * m * (n - 1)
    if end_cap:
        n_tris += m - 2

    verts_np = np.empty((n_verts, 3), dtype=np.float64)
    normals_np = np.zeros((n_verts, 3), dtype=np.float64)
    uvs_np = np.empty((n_verts, 2), dtype=np.float64)
    indices_np = np.empty((n_tris, 3), dtype=np.uint32)
    lam1_np = np.empty(n, dtype=np.float64)
    lam2_np = np.empty(n, dtype=np.float64)
    centers_np = np.empty((n + 1, 3), dtype=np.float64)
    profile_np = np.empty((m, 2), dtype=np.float64)
    ring_np = np.empty((m, 3), dtype=np.float64)

    cdef double[:, ::1] verts = verts_np
    cdef double[:, ::1] normals = normals_np
    cdef double[:, ::1] uvs = uvs_np
    cdef unsigned int[:, ::1] tris = indices_np
    cdef double[::1] lam1v = lam1_np
    cdef double[::1] lam2v = lam2_np
    cdef double[:, ::1] centers = centers_np
    cdef double[:, ::1] prof = profile_np
    cdef double[:, ::1] ring = ring_np

    cdef Py_ssize_t t, i, j, jj, s, r, jn, base, bi
    cdef double dx, dy, dz, dn, tol
    cdef double pdx, pdy, pdz
    cdef double ux, uy, uz, un, vx, vy, vz
    cdef double wx, wy, wz, xi, eta
    cdef double sx, sy, sxx, sxy, syy, mx, my, ca, cb, cc
    cdef double tr, disc, l1, l2
    cdef double e1x, e1y, en, c1x, c1y, c2x, c2y, n1, n2
    cdef double r1, r2, a1, a2, ex, ey, px, py
    cdef double theta, ct, st
    cdef double score, best_score, d0, d1, d2
    cdef Py_ssize_t best_s, best_r, src
    cdef double ax, ay, az, bx, by, bz, fx, fy, fz, fl
    cdef unsigned int ia, ib, ic

    with nogil:
        # Ring centers; the cloud coincides at the seed, keep it exact.
        for t in range(n + 1):
            sx = 0.0
            sy = 0.0
            sxx = 0.0
            for i in range(k):
                sx += pts[i, t, 0]
                sy += pts[i, t, 1]
                sxx += pts[i, t, 2]
            centers[t, 0] = sx / k
            centers[t, 1] = sy / k
            centers[t, 2] = sxx / k
        centers[0, 0] = pts[0, 0, 0]
        centers[0, 1] = pts[0, 0, 1]
        centers[0, 2] = pts[0, 0, 2]

        for j in range(m):
            theta = 2.0 * PI * j / m
            ct = cos(theta)
            st = sin(theta)
            prof[j, 0] = pow(fabs(ct), 2.0 / tau) * _sgn(ct)
            prof[j, 1] = pow(fabs(st), 2.0 / tau) * _sgn(st)

        verts[0, 0] = centers[0, 0]
        verts[0, 1] = centers[0, 1]
        verts[0, 2] = centers[0, 2]
        uvs[0, 0] = 0.0
        uvs[0, 1] = 0.0

        # Previous step direction, +z before any center movement.
        pdx = 0.0
        pdy = 0.0
        pdz = 1.0

        for t in range(n):
            dx = centers[t + 1, 0] - centers[t, 0]
            dy = centers[t + 1, 1] - centers[t, 1]
            dz = centers[t + 1, 2] - centers[t, 2]
            dn = sqrt(dx * dx + dy * dy + dz * dz)
            tol = 1e-12 * (1.0 + sqrt(
                centers[t + 1, 0] * centers[t + 1, 0]
                + centers[t + 1, 1] * centers[t + 1, 1]
                + centers[t + 1, 2] * centers[t + 1, 2]
            ))
            if dn < tol:
                dx = pdx
                dy = pdy
                dz = pdz
            else:
                dx /= dn
                dy /= dn
                dz /= dn
                pdx = dx
                pdy = dy
                pdz = dz

            # u = d x z, falling back to d x x near the poles; v = d x u.
            ux = dy
            uy = -dx
            uz = 0.0
            un = sqrt(ux * ux + uy * uy)
            if un < 1e-6:
                ux = 0.0
                uy = dz
                uz = -dy
                un = sqrt(uy * uy + uz * uz)
            ux /= un
            uy /= un
            uz /= un
            vx = dy * uz - dz * uy
            vy = dz * ux - dx * uz
            vz = dx * uy - dy * ux

            sx = 0.0
            sy = 0.0
            sxx = 0.0
            sxy = 0.0
            syy = 0.0
            for i in range(k):
                wx = pts[i, t + 1, 0] - centers[t + 1, 0]
                wy = pts[i, t + 1, 1] - centers[t + 1, 1]
                wz = pts[i, t + 1, 2] - centers[t + 1, 2]
                xi = wx * ux + wy * uy + wz * uz
                eta = wx * vx + wy * vy + wz * vz
                sx += xi
                sy += eta
                sxx += xi * xi
                sxy += xi * eta
                syy += eta * eta
            mx = sx / k
            my = sy / k
            ca = sxx / k - mx * mx
            cb = sxy / k - mx * my
            cc = syy / k - my * my
            if ca < 0.0:
                ca = 0.0
            if cc < 0.0:
                cc = 0.0

            tr = ca + cc
            disc = sqrt((ca - cc) * (ca - cc) + 4.0 * cb * cb)
            l1 = 0.5 * (tr + disc)
            l2 = 0.5 * (tr - disc)
            if l1 < 0.0:
                l1 = 0.0
            if l2 < 0.0:
                l2 = 0.0
            lam1v[t] = l1
            lam2v[t] = l2

            if cb == 0.0:
                if ca >= cc:
                    e1x = 1.0
                    e1y = 0.0
                else:
                    e1x = 0.0
                    e1y = 1.0
            else:
                c1x = cb
                c1y = l1 - ca
                c2x = l1 - cc
                c2y = cb
                n1 = sqrt(c1x * c1x + c1y * c1y)
                n2 = sqrt(c2x * c2x + c2y * c2y)
                if n2 >= n1:
                    e1x = c2x / n2
                    e1y = c2y / n2
                else:
                    e1x = c1x / n1
                    e1y = c1y / n1
            if e1x < 0.0 or (e1x == 0.0 and e1y < 0.0):
                e1x = -e1x
                e1y = -e1y

            if use_stddev:
                r1 = sqrt(l1)
                r2 = sqrt(l2)
            else:
                r1 = l1
                r2 = l2
            a1 = 2.0 * r1
            a2 = 2.0 * r2
            if a1 < clamp:
                a1 = clamp
            if a2 < clamp:
                a2 = clamp

            for j in range(m):
                ex = a1 * prof[j, 0]
                ey = a2 * prof[j, 1]
                # rotate by [e1 e2] with e2 = rot90(e1)
                px = ex * e1x - ey * e1y
                py = ex * e1y + ey * e1x
                ring[j, 0] = centers[t + 1, 0] + px * ux + py * vx
                ring[j, 1] = centers[t + 1, 1] + px * uy + py * vy
                ring[j, 2] = centers[t + 1, 2] + px * uz + py * vz

            base = 1 + t * m
            if t == 0:
                for j in range(m):
                    verts[base + j, 0] = ring[j, 0]
                    verts[base + j, 1] = ring[j, 1]
                    verts[base + j, 2] = ring[j, 2]
            else:
                # Align to the previous (already aligned) ring over all
                # shifts and both orientations; candidate (s, r=0) is
                # ring[(j+s) mod m], r=1 reverses via (m-i) mod m first.
                best_score = -1.0
                best_s = 0
                best_r = 0
                for s in range(m):
                    for r in range(2):
                        score = 0.0
                        for j in range(m):
                            jj = (j + s) % m
                            if r == 1:
                                jj = (m - jj) % m
                            d0 = ring[jj, 0] - verts[base - m + j, 0]
                            d1 = ring[jj, 1] - verts[base - m + j, 1]
                            d2 = ring[jj, 2] - verts[base - m + j, 2]
                            score += sqrt(d0 * d0 + d1 * d1 + d2 * d2)
                        if best_score < 0.0 or score < best_score:
                            best_score = score
                            best_s = s
                            best_r = r
                for j in range(m):
                    jj = (j + best_s) % m
                    if best_r == 1:
                        jj = (m - jj) % m
                    verts[base + j, 0] = ring[jj, 0]
                    verts[base + j, 1] = ring[jj, 1]
                    verts[base + j, 2] = ring[jj, 2]

            for j in range(m):
                uvs[base + j, 0] = (t + 1.0) / n
                uvs[base + j, 1] = (1.0 * j) / m

        # Triangle list: apex fan, then the side quads, then the cap.
        bi = 0
        for j in range(m):
            jn = (j + 1) % m
            tris[bi, 0] = 0
            tris[bi, 1] = <unsigned int> (1 + jn)
            tris[bi, 2] = <unsigned int> (1 + j)
            bi += 1
        for t in range(n - 1):
            base = 1 + t * m
            for j in range(m):
                jn = (j + 1) % m
                tris[bi, 0] = <unsigned int> (base + j)
                tris[bi, 1] = <unsigned int> (base + jn)
                tris[bi, 2] = <unsigned int> (base + m + jn)
                bi += 1
                tris[bi, 0] = <unsigned int> (base + j)
                tris[bi, 1] = <unsigned int> (base + m + jn)
                tris[bi, 2] = <unsigned int> (base + m + j)
                bi += 1
        if end_cap:
            base = 1 + (n - 1) * m
            for j in range(1, m - 1):
                tris[bi, 0] = <unsigned int> base
                tris[bi, 1] = <unsigned int> (base + j)
                tris[bi, 2] = <unsigned int> (base + j + 1)
                bi += 1

        # Vertex normals: average of incident unit face normals.
        for t in range(n_tris):
            ia = tris[t, 0]
            ib = tris[t, 1]
            ic = tris[t, 2]
            ax = verts[ib, 0] - verts[ia, 0]
            ay = verts[ib, 1] - verts[ia, 1]
            az = verts[ib, 2] - verts[ia, 2]
            bx = verts[ic, 0] - verts[ia, 0]
            by = verts[ic, 1] - verts[ia, 1]
            bz = verts[ic, 2] - verts[ia, 2]
            fx = ay * bz - az * by
            fy = az * bx - ax * bz
            fz = ax * by - ay * bx
            fl = sqrt(fx * fx + fy * fy + fz * fz)
            if fl > 0.0:
                fx /= fl
                fy /= fl
                fz /= fl
                normals[ia, 0] += fx
                normals[ia, 1] += fy
                normals[ia, 2] += fz
                normals[ib, 0] += fx
                normals[ib, 1] += fy
                normals[ib, 2] += fz
                normals[ic, 0] += fx
                normals[ic, 1] += fy
                normals[ic, 2] += fz
        for t in range(n_verts):
            fl = sqrt(
                normals[t, 0] * normals[t, 0]
                + normals[t, 1] * normals[t, 1]
                + normals[t, 2] * normals[t, 2]
            )
            if fl > 0.0:
                normals[t, 0] /= fl
                normals[t, 1] /= fl
                normals[t, 2] /= fl
            else:
                normals[t, 2] = 1.0

    return verts_np, normals_np, uvs_np, indices_np, lam1_np, lam2_np
