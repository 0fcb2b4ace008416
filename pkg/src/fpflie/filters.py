"""Feedback particle filter, constant-gain moment filter and the exact SO(2) posterior.

These are the reference implementations: each step is a plain function
``state -> state`` written with vectorized numpy.  The Monte Carlo harness
runs the same algorithms through :mod:`fpflie.engine`.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .gain import (
    GainField,
    IllConditioned,
    KernelConfig,
    ObservationChannel,
    ensemble_moments,
    galerkin_gain,
    kernel_gain,
    so2_angle,
    so2_fourier_basis,
    so3_wigner_basis,
)
from .lie import hat, quat_exp_step
from .sensors import LinearSensor, attitude_sensor, so2_sensor

BACKENDS = ("galerkin", "kernel", "constant", "none")


class NonFinite(FloatingPointError):
    """A particle increment became NaN or infinite."""


class SubgroupViolation(ValueError):
    """An SO(2) particle left the z-rotation subgroup."""


@dataclass(frozen=True)
class ObservationIncrement:
    dZ: np.ndarray
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")


def attitude_h(q, r_g, r_b):
    """Stacked accelerometer/magnetometer model ``(-R(q)ᵀ r_g, R(q)ᵀ r_b)``."""
    return attitude_sensor(r_g, r_b).h(q)


# --------------------------------------------------------------------------
# Feedback particle filter on SO(3)
# --------------------------------------------------------------------------


@dataclass
class FpfState:
    """Particles plus everything a step needs.

    ``rng`` is advanced in place by :func:`fpf_step`; ``phi`` carries the
    kernel solver's warm start between steps.
    """

    particles: np.ndarray
    backend: str
    sigma_B: float
    sigma_W: float
    rng: np.random.Generator
    sensor: LinearSensor = field(default_factory=attitude_sensor)
    kernel: KernelConfig = KernelConfig()
    phi: np.ndarray = None
    t: float = 0.0
    ill_conditioned: int = 0

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}")


def fpf_gain(state, h_values=None):
    """Gain at every particle, ``(N, 3, m)``, plus solver diagnostics."""
    q = state.particles
    if h_values is None:
        h_values = state.sensor.h(q)
    N, m = h_values.shape
    if state.backend == "none":
        return GainField(np.zeros((N, 3, m)))
    if state.backend == "constant":
        mu, sigma = ensemble_moments(q)
        K = sigma @ state.sensor.jacobian(mu).T / state.sigma_W**2
        return GainField(np.broadcast_to(K, (N, 3, m)).copy())
    grad = state.sensor.grad(q) if state.kernel.use_h_gradient else None
    channel = ObservationChannel(h_values, state.sigma_W, grad)
    if state.backend == "galerkin":
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IllConditioned)
            return galerkin_gain(q, channel, so3_wigner_basis())
    return kernel_gain(q, channel, state.kernel, phi0=state.phi)


def fpf_step(state, omega, obs, noise=None):
    """One propagation-update step of the quaternion FPF.

    ``noise`` optionally supplies the standard normal draws ``(N, 3)``; by
    default they come from ``state.rng``.
    """
    q = state.particles
    N = q.shape[0]
    dt = obs.dt
    h = state.sensor.h(q)
    h_hat = h.mean(axis=0)
    gain = fpf_gain(state, h)
    if noise is None:
        noise = state.rng.standard_normal((N, 3))
    dB = np.sqrt(dt) * noise
    dI = np.asarray(obs.dZ) - 0.5 * (h + h_hat) * dt
    dnu = np.asarray(omega) * dt + state.sigma_B * dB + np.einsum("inj,ij->in", gain.coords, dI)
    if not np.all(np.isfinite(dnu)):
        bad = np.flatnonzero(~np.all(np.isfinite(dnu), axis=1))
        raise NonFinite(f"non-finite increment at t={state.t:.4f} for particles {bad[:5].tolist()}")
    return replace(
        state,
        particles=quat_exp_step(q, dnu),
        phi=gain.phi,
        t=state.t + dt,
        ill_conditioned=state.ill_conditioned + int(gain.ill_conditioned),
    )


# --------------------------------------------------------------------------
# Moment filter (constant-gain mean/covariance equations)
# --------------------------------------------------------------------------


@dataclass
class MomentState:
    mu: np.ndarray
    sigma: np.ndarray
    t: float = 0.0


def psd_project(S):
    S = 0.5 * (S + S.T)
    vals, vecs = np.linalg.eigh(S)
    return (vecs * np.clip(vals, 0.0, None)) @ vecs.T


def moment_filter_step(state, omega, obs, sensor, sigma_B, sigma_W, mode="stochastic"):
    """Euler step of the mean/covariance equations with gain ``K = Σ Hᵀ / σ_W²``.

    ``mode="deterministic"`` drops the innovation-driven covariance terms,
    which leaves the left-invariant EKF Riccati equation.
    """
    if mode not in ("stochastic", "deterministic"):
        raise ValueError(f"unknown mode {mode!r}")
    mu, S, dt = state.mu, state.sigma, obs.dt
    omega = np.asarray(omega, dtype=float)
    H = sensor.jacobian(mu)
    K = S @ H.T / sigma_W**2
    u = K @ (np.asarray(obs.dZ) - sensor.h(mu) * dt)
    A = -hat(omega)
    dS = (A @ S + S @ A.T + sigma_B**2 * np.eye(3) - S @ H.T @ H @ S / sigma_W**2) * dt
    if mode == "stochastic":
        U = hat(u)
        dS = dS - U @ S - S @ U.T
    return MomentState(quat_exp_step(mu, omega * dt + u), psd_project(S + dS), state.t + dt)


# --------------------------------------------------------------------------
# SO(2) subgroup: exact posterior and particle filter
# --------------------------------------------------------------------------


def so2_quat(theta):
    theta = np.asarray(theta, dtype=float)
    z = np.zeros_like(theta)
    return np.stack([np.cos(theta / 2), z, z, np.sin(theta / 2)], axis=-1)


def so2_h(theta):
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), -np.sin(theta)], axis=-1)


def wrapped_mixture_logpdf(theta, means, sigmas, weights, wraps=3):
    """Log-density of a mixture of wrapped normals on the circle."""
    theta = np.asarray(theta, dtype=float)[..., None, None]
    means = np.asarray(means, float)[:, None]
    sigmas = np.asarray(sigmas, float)[:, None]
    k = np.arange(-wraps, wraps + 1)[None, :]
    z = (theta - means - 2 * np.pi * k) / sigmas
    log_comp = -0.5 * z**2 - np.log(np.sqrt(2 * np.pi) * sigmas) + np.log(np.asarray(weights, float))[:, None]
    c = log_comp.max(axis=(-2, -1), keepdims=True)
    return (c + np.log(np.sum(np.exp(log_comp - c), axis=(-2, -1), keepdims=True)))[..., 0, 0]


@dataclass
class So2Posterior:
    """Closed-form posterior of the static SO(2) model on a uniform grid.

    The likelihood term ``-(t/2σ²)|h|²`` is constant because ``|h| = 1`` and
    drops out on normalization.
    """

    means: tuple
    sigmas: tuple
    weights: tuple
    sigma_W: float
    Z: np.ndarray = field(default_factory=lambda: np.zeros(2))
    t: float = 0.0
    G: int = 2048

    @property
    def grid(self):
        return -np.pi + 2 * np.pi * np.arange(self.G) / self.G

    def _log_unnormalized(self, theta):
        return (
            wrapped_mixture_logpdf(theta, self.means, self.sigmas, self.weights)
            + so2_h(theta) @ self.Z / self.sigma_W**2
        )

    def _log_norm(self):
        lg = self._log_unnormalized(self.grid)
        c = lg.max()
        # periodic trapezoid rule
        return c + np.log(np.sum(np.exp(lg - c)) * 2 * np.pi / self.G)

    def density(self, theta=None):
        """Normalized density at ``theta`` (defaults to the grid)."""
        theta = self.grid if theta is None else theta
        return np.exp(self._log_unnormalized(theta) - self._log_norm())

    def bin_masses(self, edges, points_per_bin=64):
        """Posterior mass in each ``[edges[k], edges[k+1])`` by Gauss–Legendre quadrature."""
        x, w = np.polynomial.legendre.leggauss(points_per_bin)
        lo, hi = np.asarray(edges[:-1]), np.asarray(edges[1:])
        half = 0.5 * (hi - lo)
        th = 0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]
        return np.sum(self.density(th) * w[None, :], axis=1) * half

    def moments(self):
        """Posterior mean and variance of θ (linear, on ``[-π, π)``)."""
        th = self.grid
        p = self.density() * 2 * np.pi / self.G
        mean = np.sum(p * th)
        return mean, np.sum(p * (th - mean) ** 2)


def so2_oracle_update(post, obs):
    return replace(post, Z=post.Z + np.asarray(obs.dZ, dtype=float), t=post.t + obs.dt)


@dataclass
class So2FpfState:
    particles: np.ndarray
    sigma_W: float
    backend: str = "kernel"
    kernel: KernelConfig = KernelConfig(epsilon=0.2)
    phi: np.ndarray = None
    t: float = 0.0

    @property
    def angles(self):
        return so2_angle(self.particles)


_SO2 = so2_sensor()


def so2_fpf_step(state, obs, subgroup_tol=1e-9):
    """Static-model FPF step restricted to z-rotations (scalar gain, ω = 0)."""
    q = state.particles
    dt = obs.dt
    h = _SO2.h(q)
    h_hat = h.mean(axis=0)
    grad = _SO2.grad(q)[:, 2:3, :] if state.kernel.use_h_gradient else None
    channel = ObservationChannel(h, state.sigma_W, grad)
    if state.backend == "kernel":
        gain = kernel_gain(q, channel, state.kernel, generators=(2,), phi0=state.phi)
    elif state.backend == "galerkin":
        gain = galerkin_gain(q, channel, so2_fourier_basis())
    else:
        raise ValueError(f"unknown backend {state.backend!r}")
    dI = np.asarray(obs.dZ) - 0.5 * (h + h_hat) * dt
    dnu = np.zeros((q.shape[0], 3))
    dnu[:, 2] = np.einsum("ij,ij->i", gain.coords[:, 0, :], dI)
    if not np.all(np.isfinite(dnu)):
        raise NonFinite(f"non-finite SO(2) increment at t={state.t:.4f}")
    new = quat_exp_step(q, dnu)
    if np.max(np.abs(new[:, 1:3])) > subgroup_tol:
        raise SubgroupViolation("particle left the z-rotation subgroup")
    return replace(state, particles=new, phi=gain.phi, t=state.t + dt)


def sample_so2_mixture(means, sigmas, weights, n, rng):
    """Angles drawn from a Gaussian mixture, returned as z-rotation quaternions."""
    comp = rng.choice(len(weights), size=n, p=np.asarray(weights) / np.sum(weights))
    theta = np.asarray(means)[comp] + np.asarray(sigmas)[comp] * rng.standard_normal(n)
    return so2_quat(theta)

