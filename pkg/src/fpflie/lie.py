"""Rotation group arithmetic: so(3), SO(3) and unit quaternions.

Quaternions are stored scalar-first, ``q = (q0, q1, q2, q3)``, and every
function accepts either a single quaternion of shape ``(4,)`` or a stack of
shape ``(..., 4)``.  The rotation convention is the one where
``quat_to_rot(p ⊗ q) == quat_to_rot(p) @ quat_to_rot(q)`` and right
multiplication by ``exp_so3(w)`` is a body-frame increment.
"""

import numpy as np

#: Orthonormal basis of so(3); ``BASIS[n]`` generates rotation about axis n.
BASIS = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
)

Q_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_SMALL_ANGLE = 1e-8


class NonSkewInput(ValueError):
    """Raised by :func:`vee` when the input is not skew-symmetric."""


class DegenerateSpectrum(ArithmeticError):
    """The principal eigenvector of the quaternion scatter matrix is not unique."""


def hat(w):
    """Map so(3) coordinates ``(..., 3)`` to skew matrices ``(..., 3, 3)``."""
    w = np.asarray(w, dtype=float)
    S = np.zeros(w.shape[:-1] + (3, 3))
    S[..., 0, 1] = -w[..., 2]
    S[..., 0, 2] = w[..., 1]
    S[..., 1, 0] = w[..., 2]
    S[..., 1, 2] = -w[..., 0]
    S[..., 2, 0] = -w[..., 1]
    S[..., 2, 1] = w[..., 0]
    return S


def vee(S, tol=1e-9):
    """Inverse of :func:`hat`.

    Raises
    ------
    NonSkewInput
        If ``|S + S^T|`` exceeds ``tol`` anywhere.
    """
    S = np.asarray(S, dtype=float)
    if np.max(np.abs(S + np.swapaxes(S, -1, -2)), initial=0.0) > tol:
        raise NonSkewInput("matrix is not skew-symmetric")
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def exp_so3(w):
    """Rodrigues formula for ``expm(hat(w))``."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)[..., None, None]
    K = hat(w)
    small = theta < _SMALL_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * (K @ K)


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(p, q):
    """Hamilton product ``p ⊗ q`` (renormalized)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p0, pv = p[..., :1], p[..., 1:]
    q0, qv = q[..., :1], q[..., 1:]
    r0 = p0 * q0 - np.sum(pv * qv, axis=-1, keepdims=True)
    rv = p0 * qv + q0 * pv + np.cross(pv, qv)
    return quat_normalize(np.concatenate([r0, rv], axis=-1))


def quat_inv(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rot(q):
    q = np.asarray(q, dtype=float)
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 2 * q0**2 + 2 * q1**2 - 1
    R[..., 0, 1] = 2 * (q1 * q2 - q0 * q3)
    R[..., 0, 2] = 2 * (q1 * q3 + q0 * q2)
    R[..., 1, 0] = 2 * (q1 * q2 + q0 * q3)
    R[..., 1, 1] = 2 * q0**2 + 2 * q2**2 - 1
    R[..., 1, 2] = 2 * (q2 * q3 - q0 * q1)
    R[..., 2, 0] = 2 * (q1 * q3 - q0 * q2)
    R[..., 2, 1] = 2 * (q2 * q3 + q0 * q1)
    R[..., 2, 2] = 2 * q0**2 + 2 * q3**2 - 1
    return R


def canonical_sign(q):
    """Pick the representative with ``q0 > 0``; ties go to the first nonzero vector entry."""
    q = np.array(q, dtype=float)
    flat = q.reshape(-1, 4)
    for row in flat:
        for c in row:
            if abs(c) > 1e-15:
                if c < 0:
                    row *= -1.0
                break
    return flat.reshape(q.shape)


def rot_to_quat(R):
    """Shepperd's method; returns the canonical-sign quaternion."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for k, M in enumerate(flat):
        tr = np.trace(M)
        diag = np.diag(M)
        i = int(np.argmax(np.r_[tr, diag]))
        if i == 0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (M[2, 1] - M[1, 2]) / s, (M[0, 2] - M[2, 0]) / s, (M[1, 0] - M[0, 1]) / s]
        elif i == 1:
            s = 2.0 * np.sqrt(1.0 + M[0, 0] - M[1, 1] - M[2, 2])
            q = [(M[2, 1] - M[1, 2]) / s, 0.25 * s, (M[0, 1] + M[1, 0]) / s, (M[0, 2] + M[2, 0]) / s]
        elif i == 2:
            s = 2.0 * np.sqrt(1.0 - M[0, 0] + M[1, 1] - M[2, 2])
            q = [(M[0, 2] - M[2, 0]) / s, (M[0, 1] + M[1, 0]) / s, 0.25 * s, (M[1, 2] + M[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 - M[0, 0] - M[1, 1] + M[2, 2])
            q = [(M[1, 0] - M[0, 1]) / s, (M[0, 2] + M[2, 0]) / s, (M[1, 2] + M[2, 1]) / s, 0.25 * s]
        out[k] = q
    out = canonical_sign(quat_normalize(out))
    return out.reshape(R.shape[:-2] + (4,))


def quat_exp(dnu):
    """Unit quaternion of the body rotation vector ``dnu`` (sinc-safe)."""
    dnu = np.asarray(dnu, dtype=float)
    x = np.linalg.norm(dnu, axis=-1, keepdims=True)
    half = 0.5 * x
    small = x < _SMALL_ANGLE
    safe = np.where(small, 1.0, x)
    # sin(x/2)/x -> 1/2 (1 - x^2/24)
    s = np.where(small, 0.5 * (1.0 - x**2 / 24.0), np.sin(half) / safe)
    return np.concatenate([np.cos(half), s * dnu], axis=-1)


def quat_exp_step(q, dnu):
    """Propagate ``q`` by the body increment ``dnu``: ``q ⊗ exp(dnu)``."""
    return quat_mul(q, quat_exp(dnu))


def quat_log(q):
    """Rotation vector of ``q`` with angle in ``[0, π]`` (sign of q ignored)."""
    q = np.asarray(q, dtype=float)
    q0 = q[..., :1]
    qv = q[..., 1:]
    sgn = np.where(q0 < 0, -1.0, 1.0)
    q0 = sgn * q0
    qv = sgn * qv
    s = np.linalg.norm(qv, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, q0)
    small = s < _SMALL_ANGLE
    scale = np.where(small, 2.0 / np.where(q0 == 0, 1.0, q0), angle / np.where(small, 1.0, s))
    return scale * qv


def dist_sq_frobenius(R1, R2):
    """Squared chordal distance ``|R1 - R2|_F^2``."""
    D = np.asarray(R1, dtype=float) - np.asarray(R2, dtype=float)
    return np.sum(D * D, axis=(-2, -1))


def lie_deriv_dist_sq(Ri, Rj, n):
    """Derivative of ``|Ri exp(τ E_n) - Rj|_F^2`` at τ = 0.

    Equals ``-2 tr(Ri E_n Rj^T)``; ``n`` is the 1-based generator index.
    """
    if n not in (1, 2, 3):
        raise ValueError("basis index must be 1, 2 or 3")
    Ri = np.asarray(Ri, dtype=float)
    Rj = np.asarray(Rj, dtype=float)
    return -2.0 * np.sum((Ri @ BASIS[n - 1]) * Rj, axis=(-2, -1))


def quat_mean(qs, gap_tol=1e-12):
    """Principal eigenvector of ``(1/N) Σ q qᵀ`` (canonical sign).

    Raises
    ------
    DegenerateSpectrum
        If the two largest eigenvalues are closer than ``gap_tol``.
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=float))
    if qs.shape[0] < 1:
        raise ValueError("need at least one quaternion")
    Q = qs.T @ qs / qs.shape[0]
    vals, vecs = np.linalg.eigh(Q)
    if vals[-1] - vals[-2] < gap_tol:
        raise DegenerateSpectrum(f"top eigenvalues {vals[-1]:.3e} and {vals[-2]:.3e} coincide")
    return canonical_sign(vecs[:, -1] / np.linalg.norm(vecs[:, -1]))


def psd_sqrt(sigma):
    """Symmetric square root of a PSD matrix (negative eigenvalues clipped)."""
    sigma = np.asarray(sigma, dtype=float)
    vals, vecs = np.linalg.eigh(0.5 * (sigma + sigma.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def sample_concentrated(mean_q, sigma, n, rng):
    """Draw ``n`` quaternions ``mean_q ⊗ exp(v)``, ``v ~ N(0, sigma)``.

    ``rng`` is a :class:`numpy.random.Generator`; the output depends only on
    its state.
    """
    z = rng.standard_normal((n, 3))
    v = z @ psd_sqrt(sigma)
    return quat_exp_step(np.broadcast_to(mean_q, (n, 4)), v)


def tangent_offsets(qs, mean_q):
    """Rotation vectors of ``mean_q⁻¹ ⊗ q`` for each particle."""
    return quat_log(quat_mul(quat_inv(mean_q), qs))


def rotation_angle_error(q_hat, q_true):
    """Angle of ``q_hat⁻¹ ⊗ q_true`` in ``[0, π]``.

    Evaluated as ``2 atan2(|δq_v|, |δq_0|)``, which equals ``2 arccos|δq_0|``
    for unit quaternions but keeps full precision near zero.
    """
    dq = quat_mul(quat_inv(q_hat), q_true)
    return 2.0 * np.arctan2(np.linalg.norm(dq[..., 1:], axis=-1), np.abs(dq[..., 0]))
