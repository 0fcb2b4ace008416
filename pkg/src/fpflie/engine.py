"""Compiled whole-run loop for the attitude FPF.

:func:`run_fpf` executes every (sub-)step of one filter run inside a
single numba function, so the per-step cost is the filter arithmetic
alone.  The math mirrors :func:`fpflie.filters.fpf_step` with the three
gain backends; ``tests/test_engine.py`` checks the two paths against
each other on identical noise.
"""

import numpy as np
from numba import njit

from .gain import KernelConfig

BACKEND_CODES = {"galerkin": 0, "kernel": 1, "constant": 2, "none": 3}

OK, NON_FINITE, DEGENERATE = 0, 1, 2
STATUS_NAMES = {OK: "ok", NON_FINITE: "non-finite", DEGENERATE: "degenerate-mean"}


# --------------------------------------------------------------------------
# Small kernels
# --------------------------------------------------------------------------


@njit(cache=True)
def _qmul(p0, p1, p2, p3, q0, q1, q2, q3):
    r0 = p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3
    r1 = p0 * q1 + q0 * p1 + p2 * q3 - p3 * q2
    r2 = p0 * q2 + q0 * p2 + p3 * q1 - p1 * q3
    r3 = p0 * q3 + q0 * p3 + p1 * q2 - p2 * q1
    nrm = np.sqrt(r0 * r0 + r1 * r1 + r2 * r2 + r3 * r3)
    return r0 / nrm, r1 / nrm, r2 / nrm, r3 / nrm


@njit(cache=True)
def _exp_step(q, i, w0, w1, w2):
    x = np.sqrt(w0 * w0 + w1 * w1 + w2 * w2)
    if x < 1e-8:
        s = 0.5 * (1.0 - x * x / 24.0)
    else:
        s = np.sin(0.5 * x) / x
    c = np.cos(0.5 * x)
    q[i, 0], q[i, 1], q[i, 2], q[i, 3] = _qmul(q[i, 0], q[i, 1], q[i, 2], q[i, 3], c, s * w0, s * w1, s * w2)


@njit(cache=True)
def _rot(q0, q1, q2, q3, R):
    R[0, 0] = 2 * q0 * q0 + 2 * q1 * q1 - 1
    R[0, 1] = 2 * (q1 * q2 - q0 * q3)
    R[0, 2] = 2 * (q1 * q3 + q0 * q2)
    R[1, 0] = 2 * (q1 * q2 + q0 * q3)
    R[1, 1] = 2 * q0 * q0 + 2 * q2 * q2 - 1
    R[1, 2] = 2 * (q2 * q3 - q0 * q1)
    R[2, 0] = 2 * (q1 * q3 - q0 * q2)
    R[2, 1] = 2 * (q2 * q3 + q0 * q1)
    R[2, 2] = 2 * q0 * q0 + 2 * q3 * q3 - 1


@njit(cache=True)
def _sensor(q, signs, refs, h, R):
    """``h[i, 3b + a] = signs[b] * (Rᵢᵀ refs[b])[a]``."""
    for i in range(q.shape[0]):
        _rot(q[i, 0], q[i, 1], q[i, 2], q[i, 3], R)
        for b in range(signs.shape[0]):
            for a in range(3):
                h[i, 3 * b + a] = signs[b] * (R[0, a] * refs[b, 0] + R[1, a] * refs[b, 1] + R[2, a] * refs[b, 2])


@njit(cache=True)
def jacobi_top(Q, A=None, V=None):
    """Principal eigenvector of a symmetric 4×4 matrix by cyclic Jacobi sweeps.

    Returns ``(v, gap)`` with ``v`` in canonical sign and ``gap`` the
    difference of the two largest eigenvalues.  ``A`` and ``V`` are
    optional 4×4 scratch buffers.
    """
    if A is None:
        A = np.empty((4, 4))
    if V is None:
        V = np.empty((4, 4))
    A[:] = Q
    V[:] = 0.0
    for k in range(4):
        V[k, k] = 1.0
    for _ in range(50):
        off = 0.0
        for p in range(3):
            for r in range(p + 1, 4):
                off += A[p, r] * A[p, r]
        if off < 1e-32:
            break
        for p in range(3):
            for r in range(p + 1, 4):
                if A[p, r] == 0.0:
                    continue
                theta = (A[r, r] - A[p, p]) / (2.0 * A[p, r])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(4):
                    akp = A[k, p]
                    akr = A[k, r]
                    A[k, p] = c * akp - s * akr
                    A[k, r] = s * akp + c * akr
                for k in range(4):
                    apk = A[p, k]
                    ark = A[r, k]
                    A[p, k] = c * apk - s * ark
                    A[r, k] = s * apk + c * ark
                for k in range(4):
                    vkp = V[k, p]
                    vkr = V[k, r]
                    V[k, p] = c * vkp - s * vkr
                    V[k, r] = s * vkp + c * vkr
    top = 0
    for k in range(1, 4):
        if A[k, k] > A[top, top]:
            top = k
    second = -np.inf
    for k in range(4):
        if k != top and A[k, k] > second:
            second = A[k, k]
    v = V[:, top].copy()
    v /= np.sqrt(np.sum(v * v))
    for k in range(4):
        if abs(v[k]) > 1e-15:
            if v[k] < 0:
                v = -v
            break
    return v, A[top, top] - second


@njit(cache=True)
def _ensemble_mean(q, gap_tol, Q, A, V):
    N = q.shape[0]
    Q[:] = 0.0
    for i in range(N):
        for a in range(4):
            for b in range(a, 4):
                Q[a, b] += q[i, a] * q[i, b]
    for a in range(4):
        for b in range(a, 4):
            Q[a, b] /= N
            Q[b, a] = Q[a, b]
    return jacobi_top(Q, A, V)


@njit(cache=True)
def _log_offset(mu, q, i):
    """Rotation vector of ``mu⁻¹ ⊗ q[i]``."""
    d0, d1, d2, d3 = _qmul(mu[0], -mu[1], -mu[2], -mu[3], q[i, 0], q[i, 1], q[i, 2], q[i, 3])
    if d0 < 0:
        d0, d1, d2, d3 = -d0, -d1, -d2, -d3
    s = np.sqrt(d1 * d1 + d2 * d2 + d3 * d3)
    if s < 1e-8:
        scale = 2.0 / d0
    else:
        scale = 2.0 * np.arctan2(s, d0) / s
    return scale * d1, scale * d2, scale * d3


# --------------------------------------------------------------------------
# Gain backends
# --------------------------------------------------------------------------


@njit(cache=True)
def _wigner(q0, q1, q2, q3, psi, dpsi):
    psi[0] = 2 * (q0 * q0 + q3 * q3) - 1
    psi[1] = 2 * (q0 * q2 + q1 * q3)
    psi[2] = 2 * (q0 * q1 - q2 * q3)
    psi[3] = 2 * (-q0 * q2 + q1 * q3)
    psi[4] = 2 * (q0 * q1 + q2 * q3)
    psi[5] = 2 * q0 * q3
    psi[6] = q0 * q0 - q3 * q3
    psi[7] = 2 * q1 * q2
    psi[8] = q1 * q1 - q2 * q2
    dpsi[0, 0] = 2 * (-q0 * q1 - q2 * q3)
    dpsi[0, 1] = 2 * (-q0 * q2 + q1 * q3)
    dpsi[0, 2] = 0.0
    dpsi[1, 0] = 2 * (q0 * q3 - q1 * q2)
    dpsi[1, 1] = 2 * (q0 * q0 + q1 * q1) - 1
    dpsi[1, 2] = 0.0
    dpsi[2, 0] = 2 * (q0 * q0 + q2 * q2) - 1
    dpsi[2, 1] = 2 * (-q0 * q3 - q1 * q2)
    dpsi[2, 2] = 0.0
    dpsi[3, 0] = 0.0
    dpsi[3, 1] = -2 * (q0 * q0 + q3 * q3) + 1
    dpsi[3, 2] = 2 * (q0 * q1 + q2 * q3)
    dpsi[4, 0] = 2 * (q0 * q0 + q3 * q3) - 1
    dpsi[4, 1] = 0.0
    dpsi[4, 2] = 2 * (q0 * q2 - q1 * q3)
    dpsi[5, 0] = -q0 * q2 - q1 * q3
    dpsi[5, 1] = q0 * q1 - q2 * q3
    dpsi[5, 2] = q0 * q0 - q3 * q3
    dpsi[6, 0] = -q0 * q1 + q2 * q3
    dpsi[6, 1] = -q0 * q2 - q1 * q3
    dpsi[6, 2] = -2 * q0 * q3
    dpsi[7, 0] = q0 * q2 + q1 * q3
    dpsi[7, 1] = q0 * q1 - q2 * q3
    dpsi[7, 2] = q2 * q2 - q1 * q1
    dpsi[8, 0] = q0 * q1 - q2 * q3
    dpsi[8, 1] = -q0 * q2 - q1 * q3
    dpsi[8, 2] = 2 * q1 * q2


@njit(cache=True)
def _cholesky(A, Lc):
    """Lower Cholesky factor in place; returns False if ``A`` is not positive definite."""
    n = A.shape[0]
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= Lc[j, k] * Lc[j, k]
        if not s > 0.0:
            return False
        Lc[j, j] = np.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= Lc[i, k] * Lc[j, k]
            Lc[i, j] = s / Lc[j, j]
        for i in range(j):
            Lc[i, j] = 0.0
    return True


@njit(cache=True)
def _spd_inverse(Lc, Ainv):
    n = Lc.shape[0]
    y = np.empty(n)
    for c in range(n):
        for i in range(n):
            s = 1.0 if i == c else 0.0
            for k in range(i):
                s -= Lc[i, k] * y[k]
            y[i] = s / Lc[i, i]
        for i in range(n - 1, -1, -1):
            s = y[i]
            for k in range(i + 1, n):
                s -= Lc[k, i] * Ainv[k, c]
            Ainv[i, c] = s / Lc[i, i]


@njit(cache=True)
def _norm1(A):
    best = 0.0
    for c in range(A.shape[1]):
        s = 0.0
        for r in range(A.shape[0]):
            s += abs(A[r, c])
        best = max(best, s)
    return best


@njit(cache=True)
def _galerkin(q, dh, sigma_W, cond_max, ridge, K, ws):
    """Fill ``K[i, n, j]``; returns True when the ridge fallback fired."""
    N, m = dh.shape
    L = 9
    psi, dpsi, dpsi_all, A, b, Lc, Ainv, kappa = ws
    A[:] = 0.0
    b[:] = 0.0
    for i in range(N):
        _wigner(q[i, 0], q[i, 1], q[i, 2], q[i, 3], psi, dpsi)
        dpsi_all[i] = dpsi
        for k in range(L):
            for l in range(k, L):
                A[k, l] += dpsi[k, 0] * dpsi[l, 0] + dpsi[k, 1] * dpsi[l, 1] + dpsi[k, 2] * dpsi[l, 2]
            for j in range(m):
                b[k, j] += psi[k] * dh[i, j]
    scale = 1.0 / (sigma_W * sigma_W)
    for k in range(L):
        for l in range(k, L):
            A[k, l] /= N
            A[l, k] = A[k, l]
        for j in range(m):
            b[k, j] = b[k, j] * scale / N
    Lc[:] = 0.0
    ill = True
    if _cholesky(A, Lc):
        _spd_inverse(Lc, Ainv)
        ill = _norm1(A) * _norm1(Ainv) > cond_max
    if ill:
        tr = 0.0
        for k in range(L):
            tr += A[k, k]
        for k in range(L):
            A[k, k] += ridge * tr / L
        _cholesky(A, Lc)
        _spd_inverse(Lc, Ainv)
    np.dot(Ainv, b, kappa)
    for i in range(N):
        for n in range(3):
            for j in range(m):
                s = 0.0
                for l in range(L):
                    s += dpsi_all[i, l, n] * kappa[l, j]
                K[i, n, j] = s
    return ill


@njit(cache=True)
def _kernel(q, dh, sigma_W, eps, iters, tol, phi, T, K, ws):
    """Diffusion-map gain; ``phi`` is the warm start and is updated in place."""
    N, m = dh.shape
    p, H, mean, new, TPhi, acc, S1 = ws
    norm = (4.0 * np.pi * eps) ** 1.5
    for i in range(N):
        T[i, i] = 1.0 / norm
        for j in range(i + 1, N):
            c = q[i, 0] * q[j, 0] + q[i, 1] * q[j, 1] + q[i, 2] * q[j, 2] + q[i, 3] * q[j, 3]
            z2 = 8.0 * (1.0 - c * c)
            if z2 < 0.0:
                z2 = 0.0
            v = np.exp(-z2 / (4.0 * eps)) / norm
            T[i, j] = v
            T[j, i] = v
    for i in range(N):
        s = 0.0
        for j in range(N):
            s += T[i, j]
        p[i] = np.sqrt(s / N)
    for i in range(N):
        s = 0.0
        for j in range(N):
            T[i, j] = T[i, j] / p[i] / p[j]
            s += T[i, j]
        for j in range(N):
            T[i, j] /= s
    scale = 1.0 / (sigma_W * sigma_W)
    for i in range(N):
        for j in range(m):
            H[i, j] = dh[i, j] * scale
    mean[:] = 0.0
    for i in range(N):
        for j in range(m):
            mean[j] += phi[i, j]
    for i in range(N):
        for j in range(m):
            phi[i, j] -= mean[j] / N
    sweeps = 0
    for _ in range(iters):
        sweeps += 1
        np.dot(T, phi, new)
        mean[:] = 0.0
        for i in range(N):
            for j in range(m):
                new[i, j] += eps * H[i, j]
                mean[j] += new[i, j]
        r = 0.0
        big = 0.0
        for i in range(N):
            for j in range(m):
                new[i, j] -= mean[j] / N
                r = max(r, abs(new[i, j] - phi[i, j]))
                big = max(big, abs(new[i, j]))
        phi[:] = new
        if r <= tol * max(1.0, big):
            break
    np.dot(T, phi, TPhi)
    for i in range(N):
        acc[:] = 0.0
        S1[:] = 0.0
        for j in range(N):
            # p = q_j⁻¹ ⊗ q_i; E_n·ζ²(R_i, R_j) = 8 p0 p_n
            a0 = q[j, 0] * q[i, 0] + q[j, 1] * q[i, 1] + q[j, 2] * q[i, 2] + q[j, 3] * q[i, 3]
            a1 = q[j, 0] * q[i, 1] - q[j, 1] * q[i, 0] - q[j, 2] * q[i, 3] + q[j, 3] * q[i, 2]
            a2 = q[j, 0] * q[i, 2] - q[j, 2] * q[i, 0] - q[j, 3] * q[i, 1] + q[j, 1] * q[i, 3]
            a3 = q[j, 0] * q[i, 3] - q[j, 3] * q[i, 0] - q[j, 1] * q[i, 2] + q[j, 2] * q[i, 1]
            t8 = 8.0 * T[i, j] * a0
            s0 = t8 * a1
            s1 = t8 * a2
            s2 = t8 * a3
            S1[0] += s0
            S1[1] += s1
            S1[2] += s2
            for jj in range(m):
                acc[0, jj] += s0 * phi[j, jj]
                acc[1, jj] += s1 * phi[j, jj]
                acc[2, jj] += s2 * phi[j, jj]
        for n in range(3):
            for jj in range(m):
                K[i, n, jj] = -(acc[n, jj] - S1[n] * TPhi[i, jj]) / (4.0 * eps)
    return sweeps


@njit(cache=True)
def _constant(q, signs, refs, sigma_W, gap_tol, K, ws):
    """Ensemble-moment Kalman gain ``Σ Hᵀ / σ_W²``; returns False on a degenerate mean."""
    N = q.shape[0]
    S, R, Ht, G, Q, A, V = ws
    mu, gap = _ensemble_mean(q, gap_tol, Q, A, V)
    if gap < gap_tol:
        return False
    S[:] = 0.0
    for i in range(N):
        c0, c1, c2 = _log_offset(mu, q, i)
        S[0, 0] += c0 * c0
        S[0, 1] += c0 * c1
        S[0, 2] += c0 * c2
        S[1, 1] += c1 * c1
        S[1, 2] += c1 * c2
        S[2, 2] += c2 * c2
    S[1, 0] = S[0, 1]
    S[2, 0] = S[0, 2]
    S[2, 1] = S[1, 2]
    S /= N
    _rot(mu[0], mu[1], mu[2], mu[3], R)
    nb = signs.shape[0]
    Ht[:] = 0.0
    for b in range(nb):
        v0 = R[0, 0] * refs[b, 0] + R[1, 0] * refs[b, 1] + R[2, 0] * refs[b, 2]
        v1 = R[0, 1] * refs[b, 0] + R[1, 1] * refs[b, 1] + R[2, 1] * refs[b, 2]
        v2 = R[0, 2] * refs[b, 0] + R[1, 2] * refs[b, 1] + R[2, 2] * refs[b, 2]
        s = signs[b]
        # columns of s * hat(v)ᵀ
        Ht[0, 3 * b + 1] = s * v2
        Ht[0, 3 * b + 2] = -s * v1
        Ht[1, 3 * b + 0] = -s * v2
        Ht[1, 3 * b + 2] = s * v0
        Ht[2, 3 * b + 0] = s * v1
        Ht[2, 3 * b + 1] = -s * v0
    np.dot(S, Ht, G)
    G /= sigma_W * sigma_W
    for i in range(N):
        K[i] = G
    return True


# --------------------------------------------------------------------------
# Run loop
# --------------------------------------------------------------------------


@njit(cache=True)
def _run(q, omega, dZ, dt, nsub, noise, backend, sigma_B, sigma_W, signs, refs,
         eps, iters, tol, cond_max, ridge, gap_tol):
    N = q.shape[0]
    n_steps, m = dZ.shape
    est = np.full((n_steps + 1, 4), np.nan)
    h = np.empty((N, m))
    dh = np.empty((N, m))
    hhat = np.empty(m)
    K = np.zeros((N, 3, m))
    R = np.empty((3, 3))
    T = np.empty((N, N)) if backend == 1 else np.empty((1, 1))
    phi = np.zeros((N, m))
    Q4 = np.empty((4, 4))
    A4 = np.empty((4, 4))
    V4 = np.empty((4, 4))
    L = 9
    ws_g = (np.empty(L), np.empty((L, 3)), np.empty((N, L, 3)), np.empty((L, L)),
            np.empty((L, m)), np.empty((L, L)), np.empty((L, L)), np.empty((L, m)))
    ws_k = (np.empty(N), np.empty((N, m)), np.empty(m), np.empty((N, m)),
            np.empty((N, m)), np.empty((3, m)), np.empty(3))
    ws_c = (np.empty((3, 3)), np.empty((3, 3)), np.empty((3, m)), np.empty((3, m)), Q4, A4, V4)
    status = 0
    fail_step = -1
    ill_count = 0
    sweeps = 0
    mu, gap = _ensemble_mean(q, gap_tol, Q4, A4, V4)
    if gap < gap_tol:
        return est, 2, 0, ill_count, sweeps
    est[0] = mu
    w = np.empty(3)
    row = 0
    for k in range(n_steps):
        ns = nsub[k]
        h_dt = dt / ns
        sq = np.sqrt(h_dt)
        for _ in range(ns):
            _sensor(q, signs, refs, h, R)
            hhat[:] = 0.0
            for i in range(N):
                for j in range(m):
                    hhat[j] += h[i, j]
            hhat /= N
            for i in range(N):
                for j in range(m):
                    dh[i, j] = h[i, j] - hhat[j]
            if backend == 0:
                if _galerkin(q, dh, sigma_W, cond_max, ridge, K, ws_g):
                    ill_count += 1
            elif backend == 1:
                sweeps += _kernel(q, dh, sigma_W, eps, iters, tol, phi, T, K, ws_k)
            elif backend == 2:
                if not _constant(q, signs, refs, sigma_W, gap_tol, K, ws_c):
                    return est, 2, k, ill_count, sweeps
            for i in range(N):
                for n in range(3):
                    u = 0.0
                    for j in range(m):
                        u += K[i, n, j] * (dZ[k, j] / ns - 0.5 * (h[i, j] + hhat[j]) * h_dt)
                    w[n] = omega[k, n] * h_dt + sigma_B * sq * noise[row, i, n] + u
                if not (np.isfinite(w[0]) and np.isfinite(w[1]) and np.isfinite(w[2])):
                    return est, 1, k, ill_count, sweeps
                _exp_step(q, i, w[0], w[1], w[2])
            row += 1
        mu, gap = _ensemble_mean(q, gap_tol, Q4, A4, V4)
        if gap < gap_tol:
            return est, 2, k + 1, ill_count, sweeps
        est[k + 1] = mu
    return est, status, fail_step, ill_count, sweeps


def substep_counts(n_steps, dt, T_f, N_f):
    """Sub-steps per step: ``N_f`` while ``t_k < T_f``, otherwise 1."""
    t = dt * np.arange(n_steps)
    return np.where(t < T_f - 1e-12 * max(1.0, T_f), int(N_f), 1).astype(np.int64)


def run_fpf(q0, omega, dZ, dt, nsub, noise, backend, sigma_B, sigma_W, sensor,
            kernel=KernelConfig(), cond_max=1e10, ridge=1e-8, gap_tol=1e-12):
    """Run one attitude FPF over a whole observation record.

    Parameters
    ----------
    q0 : (N, 4) initial particles (copied).
    omega : (n, 3) angular velocity held over each step.
    dZ : (n, m) observation increments.
    nsub : (n,) sub-steps per step; step ``k`` uses ``dZ[k]/nsub[k]``.
    noise : (sum(nsub), N, 3) standard normal draws, one row per sub-step.
    sensor : :class:`~fpflie.sensors.LinearSensor` without channel selection.

    Returns
    -------
    dict with ``estimates`` (n+1, 4), ``particles``, ``status``, ``fail_step``,
    ``ill_conditioned`` (count of regularized solves) and ``sweeps``.
    """
    if sensor.channels is not None:
        raise ValueError("the compiled engine needs a full-block sensor")
    nsub = np.ascontiguousarray(nsub, dtype=np.int64)
    noise = np.ascontiguousarray(noise, dtype=float)
    if noise.shape != (int(nsub.sum()), len(q0), 3):
        raise ValueError(f"noise shape {noise.shape} does not match the sub-step schedule")
    signs = np.array([s for s, _ in sensor.blocks], dtype=float)
    refs = np.array([r for _, r in sensor.blocks], dtype=float)
    q = np.array(q0, dtype=float, order="C")
    est, status, fail_step, ill, sweeps = _run(
        q, np.ascontiguousarray(omega, dtype=float), np.ascontiguousarray(dZ, dtype=float),
        float(dt), nsub, noise, BACKEND_CODES[backend], float(sigma_B), float(sigma_W),
        signs, refs, float(kernel.epsilon), int(kernel.iterations), float(kernel.tol),
        float(cond_max), float(ridge), float(gap_tol),
    )
    return {
        "estimates": est,
        "particles": q,
        "status": STATUS_NAMES[int(status)],
        "fail_step": int(fail_step),
        "ill_conditioned": int(ill),
        "sweeps": int(sweeps),
    }
