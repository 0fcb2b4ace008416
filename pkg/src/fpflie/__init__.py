"""Feedback particle filtering on the rotation group.

Modules
-------
lie      quaternion / SO(3) arithmetic, averaging and sampling
gain     Galerkin, kernel and constant-gain solvers for the Poisson equation
filters  quaternion FPF step, moment filter, SO(2) posterior and FPF
engine   compiled whole-run FPF loop used by the benchmark
sim      truth trajectories and observation increments
bench    Monte Carlo experiments, sweeps, timing and CSV output
"""

from .filters import FpfState, MomentState, ObservationIncrement, fpf_step, moment_filter_step
from .gain import KernelConfig, constant_gain, galerkin_gain, kernel_gain, so3_wigner_basis
from .lie import quat_mean, quat_mul, quat_to_rot, rot_to_quat, rotation_angle_error

__version__ = "0.1.0"
