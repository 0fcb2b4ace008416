"""Monte Carlo harness for the attitude and SO(2) experiments.

Every run ``j`` draws a fresh truth and observation record from
``(seed, j)``; all filters in the run consume that record and the FPF
variants share one initial ensemble.  Particle process noise comes from a
per-filter stream, so adding a filter never changes another filter's draws.
"""

import csv
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata

import numpy as np

from . import engine, streams
from .filters import (
    MomentState,
    ObservationIncrement,
    So2FpfState,
    So2Posterior,
    moment_filter_step,
    sample_so2_mixture,
    so2_fpf_step,
    so2_h,
    so2_oracle_update,
    so2_quat,
)
from .gain import KernelConfig
from .lie import quat_normalize, rotation_angle_error, sample_concentrated
from .sensors import so2_sensor
from .sim import Q_HALF_TURN_314, ScenarioConfig, simulate_truth

FPF_BACKENDS = {"fpf-g": "galerkin", "fpf-k": "kernel", "fpf-c": "constant"}
MOMENT_MODES = {"liekf-det": "deterministic", "liekf-stoch": "stochastic"}
ALL_FILTERS = tuple(FPF_BACKENDS) + tuple(MOMENT_MODES)

SWEEP_PARAMS = ("sigma_B", "sigma_W", "N")
SWEEP_VALUES = {
    "sigma_B": (0.05, 0.2, 0.5, 1.0),
    "sigma_W": (0.01745, 0.03491, 0.05236, 0.08727),
    "N": (20, 50, 100, 200),
}
TIMING_N = (20, 50, 100, 200, 500)

THREADS_ENV = "FPFLIE_THREADS"


def attitude_scenario(case="a", **overrides):
    """Nominal attitude scenario; case ``"a"`` (σ0 = 30°, truth from prior) or ``"b"``."""
    if case == "a":
        base = ScenarioConfig(prior_sigma0=np.deg2rad(30.0), truth_init=None)
    elif case == "b":
        base = ScenarioConfig(prior_sigma0=np.deg2rad(60.0), truth_init=tuple(Q_HALF_TURN_314))
    else:
        raise ValueError(f"unknown case {case!r}")
    return replace(base, **overrides)


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: ScenarioConfig = field(default_factory=attitude_scenario)
    filters: tuple = ALL_FILTERS
    M: int = 100
    N: int = 100
    T_f: float = 0.2
    N_f: int = 100
    epsilon: float = 1.0
    kernel_iterations: int = 100

    def __post_init__(self):
        unknown = set(self.filters) - set(ALL_FILTERS)
        if unknown:
            raise ValueError(f"unknown filters {sorted(unknown)}")
        if self.M < 1 or self.N < 1 or self.N_f < 1:
            raise ValueError("M, N and N_f must be >= 1")
        if not 0 <= self.T_f <= self.scenario.T:
            raise ValueError("need 0 <= T_f <= T")

    @property
    def kernel(self):
        return KernelConfig(epsilon=self.epsilon, iterations=self.kernel_iterations)

    def substeps(self):
        return engine.substep_counts(self.scenario.steps, self.scenario.dt, self.T_f, self.N_f)


@dataclass
class MetricTable:
    """Per-filter error curves and summary statistics.

    ``errors[name]`` is ``(M, n+1)`` with NaN rows for failed runs.
    """

    t: np.ndarray
    errors: dict
    failures: dict
    step_time: dict

    @property
    def filters(self):
        return list(self.errors)

    def ok(self, name):
        return ~np.any(np.isnan(self.errors[name]), axis=1)

    def mean_curve(self, name):
        """``δφ̂_t``: error averaged over the successful runs."""
        e = self.errors[name][self.ok(name)]
        return e.mean(axis=0) if len(e) else np.full(len(self.t), np.nan)

    def time_averages(self, name):
        """``<δφ^j>_T`` per run by the left Riemann sum."""
        e = self.errors[name]
        dt = np.diff(self.t)
        return e[:, :-1] @ dt / (self.t[-1] - self.t[0])

    def ta_error(self, name):
        return float(np.nanmean(self.time_averages(name)))

    def ta_std(self, name):
        return float(np.nanstd(self.time_averages(name)))

    def halving_times(self, name):
        """Per run, the first time the error drops below half its initial value."""
        out = np.full(self.errors[name].shape[0], np.nan)
        for j, e in enumerate(self.errors[name]):
            below = np.flatnonzero(e < 0.5 * e[0])
            if len(below):
                out[j] = self.t[below[0]]
            elif not np.isnan(e[0]):
                out[j] = np.inf
        return out

    def median_halving_time(self, name):
        h = self.halving_times(name)
        h = h[~np.isnan(h)]
        return float(np.median(h)) if len(h) else float("nan")

    def write_curves(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + self.filters)
            curves = [self.mean_curve(f) for f in self.filters]
            for k, t in enumerate(self.t):
                w.writerow([_fmt(t)] + [_fmt(c[k]) for c in curves])

    def write_summary(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["filter", "ta_error", "std", "failures", "median_halving_time"])
            for f in self.filters:
                w.writerow([f, _fmt(self.ta_error(f)), _fmt(self.ta_std(f)), self.failures[f],
                            _fmt(self.median_halving_time(f))])


def _fmt(x):
    return f"{float(x):.17g}"


# --------------------------------------------------------------------------
# Attitude experiments
# --------------------------------------------------------------------------


def initial_ensemble(spec, run):
    sc = spec.scenario
    rng = streams.stream(sc.seed, run, streams.INIT)
    return sample_concentrated(np.asarray(sc.prior_mean), sc.prior_cov, spec.N, rng)


def particle_noise(spec, run, name, total):
    rng = streams.stream(spec.scenario.seed, run, "particle-B", name)
    return rng.standard_normal((total, spec.N, 3))


def run_moment_filter(spec, record, omega, nsub, mode):
    sc = spec.scenario
    sensor = sc.sensor
    state = MomentState(quat_normalize(np.asarray(sc.prior_mean, float)), sc.prior_cov)
    est = np.empty((len(record.t), 4))
    est[0] = state.mu
    for k in range(len(record.dZ)):
        ns = nsub[k]
        obs = ObservationIncrement(record.dZ[k] / ns, sc.dt / ns)
        for _ in range(ns):
            state = moment_filter_step(state, omega[k], obs, sensor, sc.sigma_B, sc.sigma_W, mode)
        if not (np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.sigma))):
            return None
        est[k + 1] = state.mu
    return est


def run_single(spec, run):
    """All filters of ``spec`` on Monte Carlo run ``run``.

    Returns ``{name: (errors or None, seconds per sub-step, status)}``.
    """
    sc = spec.scenario
    record = simulate_truth(sc, run)
    omega = sc.omega_at(record.t[:-1])
    nsub = spec.substeps()
    total = int(nsub.sum())
    out = {}
    q0 = None
    for name in spec.filters:
        if name in FPF_BACKENDS:
            if q0 is None:
                q0 = initial_ensemble(spec, run)
            noise = particle_noise(spec, run, name, total)
            t0 = time.perf_counter()
            res = engine.run_fpf(q0, omega, record.dZ, sc.dt, nsub, noise, FPF_BACKENDS[name],
                                 sc.sigma_B, sc.sigma_W, sc.sensor, spec.kernel)
            elapsed = time.perf_counter() - t0
            est = res["estimates"] if res["status"] == "ok" else None
            status = res["status"]
        else:
            t0 = time.perf_counter()
            est = run_moment_filter(spec, record, omega, nsub, MOMENT_MODES[name])
            elapsed = time.perf_counter() - t0
            status = "ok" if est is not None else "non-finite"
        err = None if est is None else rotation_angle_error(est, record.q)
        out[name] = (err, elapsed / total, status)
    return out


def _threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _map_runs(spec, runs):
    n = _threads()
    if n == 1 or len(runs) == 1:
        return [run_single(spec, j) for j in runs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(run_single, [spec] * len(runs), runs))


def run_experiment(spec):
    """Run ``spec.M`` Monte Carlo runs; failed (filter, run) pairs become NaN rows."""
    sc = spec.scenario
    t = sc.dt * np.arange(sc.steps + 1)
    results = _map_runs(spec, list(range(spec.M)))
    errors, failures, step_time = {}, {}, {}
    for name in spec.filters:
        rows, fails, times = [], 0, []
        for res in results:
            err, dt_step, _ = res[name]
            times.append(dt_step)
            if err is None:
                fails += 1
                rows.append(np.full(len(t), np.nan))
            else:
                rows.append(err)
        errors[name] = np.array(rows)
        failures[name] = fails
        step_time[name] = float(np.mean(times))
    return MetricTable(t=t, errors=errors, failures=failures, step_time=step_time)


def sweep(parameter, values, spec):
    """One :class:`MetricTable` per value; seeds are shared so runs are paired."""
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMS}")
    tables = {}
    for v in values:
        if parameter == "N":
            s = replace(spec, N=int(v))
        else:
            s = replace(spec, scenario=replace(spec.scenario, **{parameter: float(v)}))
        tables[v] = run_experiment(s)
    return tables


def write_sweep(tables, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "filter", "ta_error", "std"])
        for v, tab in tables.items():
            for f in tab.filters:
                w.writerow([_fmt(v), f, _fmt(tab.ta_error(f)), _fmt(tab.ta_std(f))])


@dataclass
class TimingTable:
    N: tuple
    step_time: dict

    def slope(self, name):
        """Least-squares slope of ``log(time)`` against ``log(N)``."""
        return float(np.polyfit(np.log(self.N), np.log(self.step_time[name]), 1)[0])

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["N", "filter", "step_time_s"])
            for name, times in self.step_time.items():
                for n, s in zip(self.N, times):
                    w.writerow([n, name, f"{s:.6e}"])


def timing_study(spec, N_values=TIMING_N, filters=("fpf-g", "fpf-k", "fpf-c")):
    """Wall time per propagation-update step for each ensemble size.

    Each of the ``spec.M`` runs is timed and the median is kept, which is
    robust to scheduler noise in either direction.  A throwaway run at the smallest N triggers
    compilation before any measurement.  Absolute numbers are machine
    dependent.
    """
    spec = replace(spec, filters=tuple(filters))
    run_single(replace(spec, N=min(N_values), M=1), 0)
    times = {f: [] for f in filters}
    for n in N_values:
        s = replace(spec, N=int(n))
        runs = [run_single(s, j) for j in range(spec.M)]
        for f in filters:
            times[f].append(float(np.median([r[f][1] for r in runs])))
    return TimingTable(N=tuple(int(n) for n in N_values), step_time=times)


# --------------------------------------------------------------------------
# SO(2) bimodal experiment
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BimodalSpec:
    N: int = 500
    epsilon: float = 0.2
    T: float = 0.2
    dt: float = 0.01
    sigma_W: float = 0.12
    mu0: float = np.deg2rad(90.0)
    sigma0: float = np.deg2rad(30.0)
    theta_true: float = np.deg2rad(90.0)
    bins: int = 20
    T_f: float = 0.2
    N_f: int = 100
    backend: str = "kernel"
    seed: int = 42

    @property
    def steps(self):
        return int(round(self.T / self.dt))

    @property
    def prior(self):
        return (self.mu0, -self.mu0), (self.sigma0, self.sigma0), (0.5, 0.5)

    @property
    def edges(self):
        return np.linspace(-np.pi, np.pi, self.bins + 1)


@dataclass
class BimodalResult:
    t: np.ndarray
    edges: np.ndarray
    particles: np.ndarray   # (n+1, bins) histogram mass
    oracle: np.ndarray      # (n+1, bins) posterior mass
    moment: np.ndarray      # (n+1, bins) Gaussian mass of the moment filter
    final_angles: np.ndarray

    def l1(self):
        """L1 distance between particle and oracle bin masses at every time."""
        return np.abs(self.particles - self.oracle).sum(axis=1)

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "bin_lo", "bin_hi", "particles", "oracle", "moment_filter"])
            for k, t in enumerate(self.t):
                for b in range(len(self.edges) - 1):
                    w.writerow([_fmt(t), _fmt(self.edges[b]), _fmt(self.edges[b + 1]),
                                _fmt(self.particles[k, b]), _fmt(self.oracle[k, b]), _fmt(self.moment[k, b])])


def angle_histogram(theta, edges):
    theta = np.mod(np.asarray(theta) + np.pi, 2 * np.pi) - np.pi
    return np.histogram(theta, edges)[0] / len(theta)


def wrapped_normal_bin_masses(mean, var, edges, points_per_bin=64):
    post = So2Posterior((mean,), (np.sqrt(max(var, 1e-300)),), (1.0,), sigma_W=1.0)
    return post.bin_masses(edges, points_per_bin)


def bimodal_experiment(spec=BimodalSpec()):
    """Particle histogram, exact posterior and moment filter on the static SO(2) model.

    The moment filter starts from the prior's moments about θ = 0 (the
    symmetric mixture has no preferred mode) and runs in deterministic mode.
    """
    means, sigmas, weights = spec.prior
    rng_p = streams.stream(spec.seed, 0, streams.INIT)
    rng_w = streams.stream(spec.seed, 0, streams.TRUTH_W)
    state = So2FpfState(sample_so2_mixture(means, sigmas, weights, spec.N, rng_p), spec.sigma_W,
                        backend=spec.backend, kernel=KernelConfig(epsilon=spec.epsilon))
    post = So2Posterior(means, sigmas, weights, spec.sigma_W)
    var0 = float(np.sum(np.asarray(weights) * (np.asarray(means) ** 2 + np.asarray(sigmas) ** 2)))
    mom = MomentState(so2_quat(0.0), np.diag([0.0, 0.0, var0]))
    sensor = so2_sensor()
    nsub = engine.substep_counts(spec.steps, spec.dt, spec.T_f, spec.N_f)
    edges = spec.edges

    def snapshot():
        th_m = 2 * np.arctan2(mom.mu[3], mom.mu[0])
        return (angle_histogram(state.angles, edges), post.bin_masses(edges),
                wrapped_normal_bin_masses(th_m, mom.sigma[2, 2], edges))

    rows = [snapshot()]
    h_true = so2_h(spec.theta_true)
    for k in range(spec.steps):
        dZ = h_true * spec.dt + spec.sigma_W * np.sqrt(spec.dt) * rng_w.standard_normal(2)
        sub = ObservationIncrement(dZ / nsub[k], spec.dt / nsub[k])
        for _ in range(nsub[k]):
            state = so2_fpf_step(state, sub)
            mom = moment_filter_step(mom, np.zeros(3), sub, sensor, 0.0, spec.sigma_W, "deterministic")
        post = so2_oracle_update(post, ObservationIncrement(dZ, spec.dt))
        rows.append(snapshot())
    hist, orac, momb = (np.array(x) for x in zip(*rows))
    return BimodalResult(t=spec.dt * np.arange(spec.steps + 1), edges=edges, particles=hist,
                         oracle=orac, moment=momb, final_angles=state.angles)


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if callable(obj):
        return getattr(obj, "__name__", repr(obj))
    return obj


def code_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(path, spec, extra=None):
    """JSON record of the full spec, seeds, thread count and code version."""
    doc = {
        "spec": _jsonable(asdict(spec)),
        "spec_type": type(spec).__name__,
        "code_version": code_version(),
        "threads": _threads(),
        "numpy": np.__version__,
    }
    if extra:
        doc.update(_jsonable(extra))
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
