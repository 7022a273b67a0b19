"""Inner time-stepping loops, in a numba and a numpy flavour.

Both flavours consume pre-drawn standard normals, so the random stream is
identical whichever backend runs; only floating-point summation order may
differ (agreement is checked to ~1e-12 relative in the test suite).

Polynomial drifts are passed as an exponent table ``E`` (m monomials by d)
and a coefficient matrix ``C`` (d by m): f(x) = C @ prod(x ** E, axis=1).
"""

import math

import numpy as np

from ._backend import USE_NUMBA

ADDITIVE = 0
MULTIPLICATIVE = 1


def _em_poly_numpy(x, E, C, L, mult, kind, dt, normals, stride, out, floor):
    sq = math.sqrt(dt)
    clamps = 0
    rec = 0
    x = x.copy()
    for s in range(normals.shape[0]):
        phi = np.prod(x ** E, axis=1)
        f = C @ phi
        z = normals[s]
        if kind == ADDITIVE:
            x = x + f * dt + (L @ z) * sq
        else:
            x = x + f * dt + mult * x * z * sq
            if floor > 0.0:
                bad = x <= 0.0
                if bad.any():
                    clamps += int(bad.sum())
                    x[bad] = floor
        if (s + 1) % stride == 0:
            out[rec] = x
            rec += 1
    return x, clamps


def _em_poly_loop(x, E, C, L, mult, kind, dt, normals, stride, out, floor):
    d = x.shape[0]
    m = E.shape[0]
    sq = math.sqrt(dt)
    clamps = 0
    rec = 0
    x = x.copy()
    phi = np.empty(m)
    f = np.empty(d)
    xn = np.empty(d)
    for s in range(normals.shape[0]):
        for k in range(m):
            p = 1.0
            for j in range(d):
                for _ in range(E[k, j]):
                    p *= x[j]
            phi[k] = p
        for i in range(d):
            acc = 0.0
            for k in range(m):
                acc += C[i, k] * phi[k]
            f[i] = acc
        if kind == ADDITIVE:
            for i in range(d):
                nz = 0.0
                for j in range(d):
                    nz += L[i, j] * normals[s, j]
                xn[i] = x[i] + f[i] * dt + nz * sq
        else:
            for i in range(d):
                xn[i] = x[i] + f[i] * dt + mult * x[i] * normals[s, i] * sq
                if floor > 0.0 and xn[i] <= 0.0:
                    xn[i] = floor
                    clamps += 1
        for i in range(d):
            x[i] = xn[i]
        if (s + 1) % stride == 0:
            for i in range(d):
                out[rec, i] = x[i]
            rec += 1
    return x, clamps


def _gs_numpy(u, v, Du, Dv, F, k, dx, dt, amp, normals, stride, out):
    u = u.copy()
    v = v.copy()
    inv = 1.0 / (dx * dx)
    rec = 0
    for s in range(normals.shape[0]):
        lu = (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4.0 * u) * inv
        lv = (np.roll(v, 1, 0) + np.roll(v, -1, 0) + np.roll(v, 1, 1) + np.roll(v, -1, 1) - 4.0 * v) * inv
        uvv = u * v * v
        fu = Du * lu - uvv + F * (1.0 - u)
        fv = Dv * lv + uvv - (F + k) * v
        u = u + fu * dt + amp * normals[s, 0]
        v = v + fv * dt + amp * normals[s, 1]
        if (s + 1) % stride == 0:
            out[rec, 0] = u
            out[rec, 1] = v
            rec += 1
    return u, v


def _gs_loop(u, v, Du, Dv, F, k, dx, dt, amp, normals, stride, out):
    nx, ny = u.shape
    inv = 1.0 / (dx * dx)
    u = u.copy()
    v = v.copy()
    un = np.empty_like(u)
    vn = np.empty_like(v)
    rec = 0
    for s in range(normals.shape[0]):
        for i in range(nx):
            ip = i + 1 if i + 1 < nx else 0
            im = i - 1 if i > 0 else nx - 1
            for j in range(ny):
                jp = j + 1 if j + 1 < ny else 0
                jm = j - 1 if j > 0 else ny - 1
                uc = u[i, j]
                vc = v[i, j]
                lu = (u[ip, j] + u[im, j] + u[i, jp] + u[i, jm] - 4.0 * uc) * inv
                lv = (v[ip, j] + v[im, j] + v[i, jp] + v[i, jm] - 4.0 * vc) * inv
                uvv = uc * vc * vc
                un[i, j] = uc + (Du * lu - uvv + F * (1.0 - uc)) * dt + amp * normals[s, 0, i, j]
                vn[i, j] = vc + (Dv * lv + uvv - (F + k) * vc) * dt + amp * normals[s, 1, i, j]
        u, un = un, u
        v, vn = vn, v
        if (s + 1) % stride == 0:
            out[rec, 0] = u
            out[rec, 1] = v
            rec += 1
    return u, v


if USE_NUMBA:
    import numba

    em_poly = numba.njit(cache=True, nogil=True)(_em_poly_loop)
    gray_scott_steps = numba.njit(cache=True, nogil=True)(_gs_loop)
else:
    em_poly = _em_poly_numpy
    gray_scott_steps = _gs_numpy

# both flavours stay importable for the backend comparison
em_poly_numpy = _em_poly_numpy
gray_scott_numpy = _gs_numpy
