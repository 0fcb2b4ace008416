"""Gain-function solvers for the weighted Poisson equation on SO(3).

Given an ensemble of quaternions and an observation channel, each solver
returns the gain coordinates ``k_n(x^i) = (E_n · φ)(x^i)`` where φ solves

    π(<grad φ, grad ψ>) = (1/σ_W²) π((h - ĥ) ψ)   for all test functions ψ,

with π the empirical distribution of the particles.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .lie import hat, quat_mean, quat_to_rot, tangent_offsets, BASIS


class IllConditioned(RuntimeWarning):
    """The Galerkin matrix was regularized before solving."""


@dataclass
class ObservationChannel:
    """Observation values at the particles.

    ``h_values`` has shape ``(N,)`` or ``(N, m)``; ``h_grad`` (optional) holds
    the Lie derivatives ``E_n · h_j`` with shape ``(N, d, m)``.
    """

    h_values: np.ndarray
    noise_scale: float = 1.0
    h_grad: np.ndarray = None

    def __post_init__(self):
        h = np.asarray(self.h_values, dtype=float)
        self.h_values = h[:, None] if h.ndim == 1 else h
        if self.noise_scale <= 0:
            raise ValueError("noise_scale must be positive")
        if self.h_grad is not None:
            g = np.asarray(self.h_grad, dtype=float)
            self.h_grad = g[:, :, None] if g.ndim == 2 else g

    @property
    def h_hat(self):
        return self.h_values.mean(axis=0)

    def centered(self):
        """``(h - ĥ) / σ_W²``, shape ``(N, m)``."""
        return (self.h_values - self.h_hat) / self.noise_scale**2


@dataclass
class GainField:
    """Gain coordinates ``coords[i, n, j] = k_{n,j}(x^i)`` plus solver diagnostics."""

    coords: np.ndarray
    ill_conditioned: bool = False
    condition: float = float("nan")
    degraded: bool = False
    phi: np.ndarray = None
    residuals: list = field(default_factory=list)
    kappa: np.ndarray = None

    def mean(self):
        """Ensemble-averaged gain, shape ``(d, m)``."""
        return self.coords.mean(axis=0)


# --------------------------------------------------------------------------
# Galerkin
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GalerkinBasis:
    """Basis functions and their Lie derivatives evaluated on quaternions.

    ``values(q)`` returns ``(N, L)``; ``derivatives(q)`` returns ``(N, L, d)``
    with the last axis running over ``generators`` (0-based so(3) indices).
    """

    name: str
    L: int
    generators: tuple
    values: callable
    derivatives: callable

    @property
    def d(self):
        return len(self.generators)


def _wigner_values(q):
    q0, q1, q2, q3 = np.moveaxis(np.atleast_2d(q), -1, 0)
    return np.stack(
        [
            2 * (q0**2 + q3**2) - 1,
            2 * (q0 * q2 + q1 * q3),
            2 * (q0 * q1 - q2 * q3),
            2 * (-q0 * q2 + q1 * q3),
            2 * (q0 * q1 + q2 * q3),
            2 * q0 * q3,
            q0**2 - q3**2,
            2 * q1 * q2,
            q1**2 - q2**2,
        ],
        axis=-1,
    )


def _wigner_derivatives(q):
    q0, q1, q2, q3 = np.moveaxis(np.atleast_2d(q), -1, 0)
    z = np.zeros_like(q0)
    rows = [
        (2 * (-q0 * q1 - q2 * q3), 2 * (-q0 * q2 + q1 * q3), z),
        (2 * (q0 * q3 - q1 * q2), 2 * (q0**2 + q1**2) - 1, z),
        (2 * (q0**2 + q2**2) - 1, 2 * (-q0 * q3 - q1 * q2), z),
        (z, -2 * (q0**2 + q3**2) + 1, 2 * (q0 * q1 + q2 * q3)),
        (2 * (q0**2 + q3**2) - 1, z, 2 * (q0 * q2 - q1 * q3)),
        (-q0 * q2 - q1 * q3, q0 * q1 - q2 * q3, q0**2 - q3**2),
        (-q0 * q1 + q2 * q3, -q0 * q2 - q1 * q3, -2 * q0 * q3),
        (q0 * q2 + q1 * q3, q0 * q1 - q2 * q3, q2**2 - q1**2),
        (q0 * q1 - q2 * q3, -q0 * q2 - q1 * q3, 2 * q1 * q2),
    ]
    return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


def so3_wigner_basis():
    """The nine first-order Wigner-D functions (entries of R) and their derivatives."""
    return GalerkinBasis("so3-wigner", 9, (0, 1, 2), _wigner_values, _wigner_derivatives)


def so2_angle(q):
    """Angle of a z-rotation quaternion, wrapped to ``[-π, π)``."""
    q = np.atleast_2d(q)
    theta = 2.0 * np.arctan2(q[:, 3], q[:, 0])
    return (theta + np.pi) % (2 * np.pi) - np.pi


def so2_fourier_basis():
    """``ψ1 = sin θ``, ``ψ2 = cos θ`` on the z-rotation subgroup."""

    def values(q):
        th = so2_angle(q)
        return np.stack([np.sin(th), np.cos(th)], axis=-1)

    def derivatives(q):
        th = so2_angle(q)
        return np.stack([np.cos(th), -np.sin(th)], axis=-1)[:, :, None]

    return GalerkinBasis("so2-fourier", 2, (2,), values, derivatives)


def galerkin_matrices(ensemble, channel, basis):
    """Assemble ``A`` (L×L) and ``b`` (L×m) from the particles."""
    psi = basis.values(ensemble)
    dpsi = basis.derivatives(ensemble)
    N = psi.shape[0]
    A = np.einsum("iln,ikn->kl", dpsi, dpsi) / N
    b = psi.T @ channel.centered() / N
    return A, b, dpsi


def condition_1norm(A):
    """``|A|_1 |A⁻¹|_1`` for a symmetric matrix; ``inf`` unless ``A`` is positive definite."""
    try:
        Lc = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.inf
    Linv = np.linalg.inv(Lc)
    return float(np.linalg.norm(A, 1) * np.linalg.norm(Linv.T @ Linv, 1))


def galerkin_gain(ensemble, channel, basis, cond_max=1e10, ridge=1e-8):
    """Galerkin approximation of the gain in ``span(basis)``.

    If the 1-norm condition number of ``A`` exceeds ``cond_max`` the solve uses
    ``A + ridge * tr(A)/L * I`` and an :class:`IllConditioned` warning is
    issued; the returned field carries ``ill_conditioned=True``.
    """
    ensemble = np.atleast_2d(ensemble)
    if ensemble.shape[0] < basis.L:
        raise ValueError(f"need N >= L = {basis.L} particles")
    A, b, dpsi = galerkin_matrices(ensemble, channel, basis)
    A = 0.5 * (A + A.T)
    cond = condition_1norm(A)
    ill = bool(cond > cond_max)
    if ill:
        warnings.warn(f"Galerkin matrix condition {cond:.3g}; regularizing", IllConditioned, stacklevel=2)
        A = A + ridge * np.trace(A) / basis.L * np.eye(basis.L)
    kappa = np.linalg.solve(A, b)
    coords = np.einsum("iln,lj->inj", dpsi, kappa)
    return GainField(coords, ill_conditioned=ill, condition=float(cond), kappa=kappa)


# --------------------------------------------------------------------------
# Kernel (diffusion-map) approximation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidth, sweep budget and stopping rule of the fixed-point solver.

    The sweep stops after ``iterations`` sweeps or once the sup-norm change
    drops below ``tol * max(1, |Φ|_∞)``.  ``use_h_gradient`` adds the explicit
    ``ε E_n·h`` term to the gain when the channel provides ``h_grad``.
    """

    epsilon: float = 1.0
    iterations: int = 100
    tol: float = 1e-9
    use_h_gradient: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


def markov_matrix(ensemble, epsilon, d=3):
    """Row-stochastic diffusion-map matrix built on the chordal SO(3) distance.

    Returns ``(T, R)`` where ``R`` holds the rotation matrices of the
    particles (reused for the distance derivatives).
    """
    R = quat_to_rot(np.atleast_2d(ensemble))
    flat = R.reshape(-1, 9)
    gram = flat @ flat.T
    sq = np.diag(gram)
    zeta2 = np.clip(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0, None)
    k = np.exp(-zeta2 / (4.0 * epsilon)) / (4.0 * np.pi * epsilon) ** (d / 2.0)
    p = np.sqrt(k.mean(axis=1))
    kt = k / p[:, None] / p[None, :]
    T = kt / kt.sum(axis=1, keepdims=True)
    return T, R


def dist_derivative_matrix(R, n):
    """``Z[i, j] = E_n · ζ²(R^i, R^j) = -2 tr(R^i E_n R^jᵀ)`` (0-based ``n``)."""
    RE = (R @ BASIS[n]).reshape(-1, 9)
    return -2.0 * RE @ R.reshape(-1, 9).T


def fixed_point(T, H, epsilon, phi0=None, iterations=100, tol=1e-9):
    """Successive approximation of ``Φ = TΦ + εH`` on mean-zero vectors.

    Returns ``(phi, residuals)`` with one sup-norm residual per sweep.
    """
    H = np.asarray(H, dtype=float)
    phi = np.zeros_like(H) if phi0 is None else np.array(phi0, dtype=float)
    phi = phi - phi.mean(axis=0)
    residuals = []
    for _ in range(iterations):
        new = T @ phi + epsilon * H
        new -= new.mean(axis=0)
        r = float(np.max(np.abs(new - phi)))
        residuals.append(r)
        phi = new
        if r <= tol * max(1.0, float(np.max(np.abs(phi)))):
            break
    return phi, residuals


def kernel_gain(ensemble, channel, config=KernelConfig(), generators=(0, 1, 2), phi0=None):
    """Kernel-based gain approximation.

    ``generators`` selects the so(3) directions in which gain coordinates are
    returned (``(2,)`` for the z-rotation subgroup); its length is the group
    dimension in the kernel normalization.  ``phi0`` warm-starts the sweep.
    """
    ensemble = np.atleast_2d(ensemble)
    if ensemble.shape[0] < 2:
        raise ValueError("kernel gain needs at least two particles")
    eps = config.epsilon
    T, R = markov_matrix(ensemble, eps, d=len(generators))
    H = channel.centered()
    phi, residuals = fixed_point(T, H, eps, phi0, config.iterations, config.tol)
    TPhi = T @ phi
    coords = np.empty((ensemble.shape[0], len(generators), H.shape[1]))
    with_grad = config.use_h_gradient and channel.h_grad is not None
    for a, n in enumerate(generators):
        S = T * dist_derivative_matrix(R, n)
        coords[:, a, :] = -(S @ phi - S.sum(axis=1)[:, None] * TPhi) / (4.0 * eps)
        if with_grad:
            coords[:, a, :] += eps * channel.h_grad[:, a, :] / channel.noise_scale**2
    degraded = config.use_h_gradient and not with_grad
    return GainField(coords, degraded=degraded, phi=phi, residuals=residuals)


# --------------------------------------------------------------------------
# Constant-gain approximation
# --------------------------------------------------------------------------


def constant_gain(mean_q, sigma, r, noise_scale=1.0, sign=1.0):
    """Kalman-type gain ``sign · Σ hat(R(μ)ᵀ r)ᵀ / σ_W²`` (3×3, columns = channels)."""
    v = quat_to_rot(mean_q).T @ np.asarray(r, dtype=float)
    return sign * np.asarray(sigma, dtype=float) @ hat(v).T / noise_scale**2


def ensemble_moments(ensemble, generators=(0, 1, 2)):
    """Quaternion mean and tangent-space covariance (1/N normalization)."""
    mu = quat_mean(ensemble)
    chi = tangent_offsets(ensemble, mu)[:, list(generators)]
    return mu, chi.T @ chi / chi.shape[0]


def empirical_constant_gain(ensemble, channel, generators=(0, 1, 2), mean_q=None):
    """Particle estimate ``(1/N) Σ (h(x^i) - ĥ) χ^i / σ_W²`` of the averaged gain, ``(d, m)``.

    ``χ^i`` is the tangent offset of particle ``i`` from the ensemble mean.
    """
    ensemble = np.atleast_2d(ensemble)
    if ensemble.shape[0] < 2:
        raise ValueError("need at least two particles")
    mu = quat_mean(ensemble) if mean_q is None else mean_q
    chi = tangent_offsets(ensemble, mu)[:, list(generators)]
    return chi.T @ channel.centered() / ensemble.shape[0]
