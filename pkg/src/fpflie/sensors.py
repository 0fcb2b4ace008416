"""Direction-vector sensors ``h(R) = s Rᵀ r`` (accelerometer, magnetometer)."""

from dataclasses import dataclass

import numpy as np

from .lie import hat, quat_to_rot

R_GRAVITY = np.array([0.0, 0.0, 1.0])
R_MAGNETIC = np.array([1.0, 0.0, 1.0]) / np.sqrt(2.0)


@dataclass(frozen=True)
class LinearSensor:
    """Stack of reference-direction blocks.

    Each block ``(sign, r)`` contributes the three channels ``sign * Rᵀ r``;
    ``channels`` optionally keeps a subset of the stacked outputs.
    """

    blocks: tuple
    channels: tuple = None

    @property
    def m(self):
        return len(self._index())

    def _index(self):
        full = 3 * len(self.blocks)
        return np.arange(full) if self.channels is None else np.asarray(self.channels)

    def h(self, q):
        """Sensor outputs, shape ``(..., m)``."""
        Rt = np.swapaxes(quat_to_rot(q), -1, -2)
        out = np.concatenate([s * (Rt @ np.asarray(r, float)) for s, r in self.blocks], axis=-1)
        return out[..., self._index()]

    def jacobian(self, q):
        """``H[..., j, n] = (E_n · h_j)(q)``; for a block this is ``s * hat(Rᵀ r)``."""
        Rt = np.swapaxes(quat_to_rot(q), -1, -2)
        H = np.concatenate([s * hat(Rt @ np.asarray(r, float)) for s, r in self.blocks], axis=-2)
        return H[..., self._index(), :]

    def grad(self, q):
        """Lie derivatives laid out as ``(..., d=3, m)`` for the gain solvers."""
        return np.swapaxes(self.jacobian(q), -1, -2)


def attitude_sensor(r_g=R_GRAVITY, r_b=R_MAGNETIC):
    """Accelerometer ``-Rᵀ r_g`` stacked over magnetometer ``Rᵀ r_b``."""
    return LinearSensor(((-1.0, tuple(r_g)), (1.0, tuple(r_b))))


def so2_sensor():
    """``h(θ) = (cos θ, -sin θ)``: first two entries of ``Rᵀ e1`` on the z-rotation subgroup."""
    return LinearSensor(((1.0, (1.0, 0.0, 0.0)),), channels=(0, 1))
