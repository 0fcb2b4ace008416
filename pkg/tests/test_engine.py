import numpy as np
import pytest

from fpflie import engine
from fpflie.filters import FpfState, ObservationIncrement, fpf_step
from fpflie.lie import Q_IDENTITY, canonical_sign, quat_mean, sample_concentrated
from fpflie.sensors import attitude_sensor
from fpflie.streams import stream

SIGMA_W = 0.05236


@pytest.fixture(scope="module")
def setup():
    rng = stream(3, "engine-test")
    q0 = sample_concentrated(Q_IDENTITY, np.deg2rad(30) ** 2 * np.eye(3), 60, rng)
    omega = rng.standard_normal((5, 3))
    dZ = rng.standard_normal((5, 6)) * 0.01
    nsub = np.array([2, 2, 1, 1, 1])
    noise = rng.standard_normal((nsub.sum(), 60, 3))
    return q0, omega, dZ, nsub, noise


@pytest.mark.parametrize("backend", ["galerkin", "kernel", "constant", "none"])
def test_engine_matches_reference_step(setup, backend):
    q0, omega, dZ, nsub, noise = setup
    out = engine.run_fpf(q0, omega, dZ, 0.01, nsub, noise, backend, 0.2, SIGMA_W, attitude_sensor())
    assert out["status"] == "ok"
    st = FpfState(q0.copy(), backend, 0.2, SIGMA_W, None)
    row = 0
    for k in range(len(dZ)):
        for _ in range(nsub[k]):
            st = fpf_step(st, omega[k], ObservationIncrement(dZ[k] / nsub[k], 0.01 / nsub[k]), noise=noise[row])
            row += 1
    np.testing.assert_allclose(canonical_sign(out["particles"]), canonical_sign(st.particles), atol=1e-11)
    np.testing.assert_allclose(out["estimates"][-1], quat_mean(st.particles), atol=1e-11)


def test_jacobi_matches_eigh():
    rng = np.random.default_rng(0)
    for _ in range(20):
        X = rng.standard_normal((4, 4))
        Q = X @ X.T
        v, gap = engine.jacobi_top(Q)
        w, V = np.linalg.eigh(Q)
        u = V[:, -1] * np.sign(V[0, -1])
        np.testing.assert_allclose(v, u, atol=1e-12)
        assert gap == pytest.approx(w[-1] - w[-2], rel=1e-10)


def test_substep_counts():
    np.testing.assert_array_equal(engine.substep_counts(5, 0.1, 0.2, 7), [7, 7, 1, 1, 1])
    np.testing.assert_array_equal(engine.substep_counts(3, 0.01, 0.0, 7), [1, 1, 1])
    np.testing.assert_array_equal(engine.substep_counts(20, 0.01, 0.2, 4), [4] * 20)


def test_noise_shape_checked(setup):
    q0, omega, dZ, nsub, noise = setup
    with pytest.raises(ValueError):
        engine.run_fpf(q0, omega, dZ, 0.01, nsub, noise[:-1], "kernel", 0.2, SIGMA_W, attitude_sensor())


def test_degenerate_ensemble_reported():
    q0 = np.tile(Q_IDENTITY, (10, 1))
    q0[5:] = [0.0, 1.0, 0.0, 0.0]
    out = engine.run_fpf(q0, np.zeros((2, 3)), np.zeros((2, 6)), 0.01, np.ones(2, np.int64),
                         np.zeros((2, 10, 3)), "none", 0.0, SIGMA_W, attitude_sensor())
    assert out["status"] == "degenerate-mean"
    assert out["fail_step"] == 0


def test_nonfinite_reported(setup):
    q0, omega, dZ, nsub, noise = setup
    bad = omega.copy()
    bad[2, 0] = np.nan
    out = engine.run_fpf(q0, bad, dZ, 0.01, nsub, noise, "none", 0.2, SIGMA_W, attitude_sensor())
    assert out["status"] == "non-finite"
    assert out["fail_step"] == 2
    assert np.all(np.isnan(out["estimates"][3:]))
