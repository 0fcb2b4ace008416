"""Ground-truth attitude trajectories and sensor increments.

The truth is integrated with the same geometric step the filters use,
``q <- q ⊗ exp(ω Δt + σ_B ΔB)``, and observation increments are
``ΔZ = h(q) Δt + σ_W ΔW`` evaluated at the pre-step attitude.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .lie import Q_IDENTITY, quat_exp_step, quat_normalize, sample_concentrated
from .sensors import R_GRAVITY, R_MAGNETIC, attitude_sensor


def omega_profile(t):
    """Sinusoidal body angular velocity (rad/s) used by the attitude scenarios."""
    t = np.asarray(t, dtype=float)
    return np.stack(
        [
            np.sin(2 * np.pi * t / 15),
            -np.sin(2 * np.pi * t / 18 + np.pi / 20),
            np.cos(2 * np.pi * t / 17),
        ],
        axis=-1,
    )


def zero_omega(t):
    t = np.asarray(t, dtype=float)
    return np.zeros(t.shape + (3,))


def axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(angle / 2)], np.sin(angle / 2) * axis])


#: Case (b) truth: a half turn about (3, 1, 4).
Q_HALF_TURN_314 = axis_angle_quat([3.0, 1.0, 4.0], np.pi)


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to generate one truth trajectory.

    Parameters
    ----------
    omega : str or callable
        ``"sinusoidal"``, ``"zero"``, or a function ``t -> (..., 3)``.
    truth_init : None or array_like
        Fixed initial quaternion, or ``None`` to draw it from the prior.
    """

    T: float = 3.0
    dt: float = 0.01
    sigma_B: float = 0.2
    sigma_W: float = 0.05236
    r_g: tuple = tuple(R_GRAVITY)
    r_b: tuple = tuple(R_MAGNETIC)
    omega: object = "sinusoidal"
    prior_mean: tuple = tuple(Q_IDENTITY)
    prior_sigma0: float = np.deg2rad(30.0)
    truth_init: object = None
    seed: int = 0

    def __post_init__(self):
        if not (self.T > 0 and self.dt > 0):
            raise ValueError("T and dt must be positive")
        n = self.T / self.dt
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(f"T/dt = {n} is not an integer")
        if self.sigma_B < 0 or self.sigma_W < 0:
            raise ValueError("noise scales must be nonnegative")
        for r in (self.r_g, self.r_b):
            if abs(np.linalg.norm(r) - 1.0) > 1e-12:
                raise ValueError("reference vectors must be unit length")

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def prior_cov(self):
        return self.prior_sigma0**2 * np.eye(3)

    @property
    def sensor(self):
        return attitude_sensor(np.array(self.r_g), np.array(self.r_b))

    def omega_at(self, t):
        if callable(self.omega):
            return np.asarray(self.omega(t), dtype=float)
        if self.omega == "sinusoidal":
            return omega_profile(t)
        if self.omega == "zero":
            return zero_omega(t)
        raise ValueError(f"unknown omega profile {self.omega!r}")


@dataclass(frozen=True)
class TruthRecord:
    """Truth attitude at ``t_0..t_n`` and the increments ``ΔZ_k`` over ``[t_k, t_{k+1})``."""

    t: np.ndarray
    q: np.ndarray
    dZ: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def to_csv(self, path):
        """Write ``t, q0..q3, dZ1..dZm`` with 17 significant digits.

        The last row has no increment and its ``dZ`` entries are ``nan``.
        """
        m = self.dZ.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "q0", "q1", "q2", "q3"] + [f"dZ{j + 1}" for j in range(m)])
            for k in range(len(self.t)):
                dz = self.dZ[k] if k < len(self.dZ) else np.full(m, np.nan)
                w.writerow([f"{v:.17g}" for v in np.concatenate([[self.t[k]], self.q[k], dz])])

    @classmethod
    def from_csv(cls, path):
        data = np.genfromtxt(path, delimiter=",", names=True)
        arr = data.view((float, len(data.dtype.names)))
        t = arr[:, 0]
        return cls(t=t, q=arr[:, 1:5], dZ=arr[:-1, 5:], dt=float(t[1] - t[0]))


def initial_truth(cfg, run=0):
    if cfg.truth_init is not None:
        return quat_normalize(np.asarray(cfg.truth_init, dtype=float))
    rng = streams.stream(cfg.seed, run, streams.TRUTH_INIT)
    return sample_concentrated(np.asarray(cfg.prior_mean), cfg.prior_cov, 1, rng)[0]


def simulate_truth(cfg, run=0):
    """Truth trajectory and observation increments for Monte Carlo run ``run``."""
    n, dt = cfg.steps, cfg.dt
    sensor = cfg.sensor
    rng_B = streams.stream(cfg.seed, run, streams.TRUTH_B)
    rng_W = streams.stream(cfg.seed, run, streams.TRUTH_W)
    t = dt * np.arange(n + 1)
    omega = cfg.omega_at(t[:-1])
    dB = np.sqrt(dt) * rng_B.standard_normal((n, 3))
    dW = np.sqrt(dt) * rng_W.standard_normal((n, sensor.m))
    q = np.empty((n + 1, 4))
    q[0] = initial_truth(cfg, run)
    dZ = np.empty((n, sensor.m))
    for k in range(n):
        dZ[k] = sensor.h(q[k]) * dt + cfg.sigma_W * dW[k]
        q[k + 1] = quat_exp_step(q[k], omega[k] * dt + cfg.sigma_B * dB[k])
    return TruthRecord(t=t, q=q, dZ=dZ, dt=dt, meta={"seed": cfg.seed, "run": run})


def discrete_observation(record, n):
    """Discrete-time measurement ``Y_n = ΔZ_n / Δt``."""
    if not 0 <= n < len(record.dZ):
        raise IndexError(f"step {n} out of range")
    return record.dZ[n] / record.dt
