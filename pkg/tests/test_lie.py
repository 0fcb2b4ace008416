import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fpflie.lie import (
    BASIS,
    Q_IDENTITY,
    DegenerateSpectrum,
    NonSkewInput,
    canonical_sign,
    dist_sq_frobenius,
    exp_so3,
    hat,
    lie_deriv_dist_sq,
    quat_exp_step,
    quat_inv,
    quat_log,
    quat_mean,
    quat_mul,
    quat_normalize,
    quat_to_rot,
    rot_to_quat,
    rotation_angle_error,
    sample_concentrated,
    tangent_offsets,
    vee,
)

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

finite = st.floats(-4.0, 4.0, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
quat = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(lambda q: np.linalg.norm(q) > 0.1).map(quat_normalize)


def random_quats(rng, n):
    return quat_normalize(rng.standard_normal((n, 4)))


def expm_series(A, terms=20):
    out = np.eye(3)
    term = np.eye(3)
    for k in range(1, terms):
        term = term @ A / k
        out = out + term
    return out


def assert_rotation(R, tol=1e-9):
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=tol)
    assert abs(np.linalg.det(R) - 1.0) < tol


# hat / vee


def test_hat_basis_vectors():
    np.testing.assert_array_equal(hat([1, 0, 0]), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])
    np.testing.assert_array_equal(hat([0, 0, 0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(hat([1, 2, 3]), BASIS[0] + 2 * BASIS[1] + 3 * BASIS[2])


def test_vee_examples():
    np.testing.assert_array_equal(vee(BASIS[2]), [0, 0, 1])
    np.testing.assert_array_equal(vee(np.zeros((3, 3))), [0, 0, 0])
    np.testing.assert_array_equal(vee(hat([0.3, -0.2, 0.1])), [0.3, -0.2, 0.1])


def test_vee_rejects_symmetric_part():
    with pytest.raises(NonSkewInput):
        vee(np.eye(3))


@given(vec3)
def test_vee_hat_round_trip(w):
    np.testing.assert_array_equal(vee(hat(w)), w)
    S = hat(w)
    np.testing.assert_array_equal(S, -S.T)


# exp


def test_exp_so3_examples():
    np.testing.assert_array_equal(exp_so3([0, 0, 0]), np.eye(3))
    np.testing.assert_allclose(exp_so3([0, 0, np.pi / 2]), expm_series(hat([0, 0, np.pi / 2])), atol=1e-12)
    np.testing.assert_allclose(exp_so3([0, 0, np.pi / 2]), RZ90, atol=1e-15)


@given(vec3)
def test_exp_so3_inverse_and_group(w):
    R = exp_so3(w)
    assert_rotation(R)
    np.testing.assert_allclose(R @ exp_so3(-w), np.eye(3), atol=1e-12)


def test_exp_so3_series_branch_is_continuous():
    w = np.array([3e-9, -1e-9, 2e-9])
    np.testing.assert_allclose(exp_so3(w), np.eye(3) + hat(w), atol=1e-16)


# quaternion algebra


def test_quat_mul_identity_and_inverse():
    rng = np.random.default_rng(0)
    for q in random_quats(rng, 20):
        np.testing.assert_allclose(quat_mul(q, Q_IDENTITY), q, atol=1e-15)
        np.testing.assert_allclose(canonical_sign(quat_mul(q, quat_inv(q))), Q_IDENTITY, atol=1e-15)


def test_quat_inv_examples():
    np.testing.assert_array_equal(quat_inv(Q_IDENTITY), Q_IDENTITY)
    th, a = 0.7, np.array([2.0, -1.0, 2.0]) / 3.0
    q = np.concatenate([[np.cos(th / 2)], np.sin(th / 2) * a])
    np.testing.assert_allclose(quat_inv(q), np.concatenate([[np.cos(th / 2)], -np.sin(th / 2) * a]))


def test_homomorphism_1000_pairs():
    rng = np.random.default_rng(1)
    p, q = random_quats(rng, 1000), random_quats(rng, 1000)
    np.testing.assert_allclose(quat_to_rot(quat_mul(p, q)), quat_to_rot(p) @ quat_to_rot(q), atol=1e-12)


def test_quat_mul_associative():
    rng = np.random.default_rng(2)
    a, b, c = (random_quats(rng, 100) for _ in range(3))
    np.testing.assert_allclose(quat_mul(quat_mul(a, b), c), quat_mul(a, quat_mul(b, c)), atol=1e-14)


def test_quat_to_rot_examples():
    np.testing.assert_array_equal(quat_to_rot(Q_IDENTITY), np.eye(3))
    q = np.array([np.cos(np.pi / 4), 0, 0, np.sin(np.pi / 4)])
    np.testing.assert_allclose(quat_to_rot(q), RZ90, atol=1e-15)


@given(quat)
def test_quat_to_rot_is_rotation_and_even(q):
    R = quat_to_rot(q)
    assert_rotation(R, 1e-12)
    np.testing.assert_array_equal(quat_to_rot(-q), R)


def test_rot_to_quat_examples():
    np.testing.assert_array_equal(rot_to_quat(np.eye(3)), Q_IDENTITY)
    np.testing.assert_allclose(rot_to_quat(np.diag([-1.0, -1.0, 1.0])), [0, 0, 0, 1], atol=1e-15)


def test_rot_to_quat_round_trip():
    rng = np.random.default_rng(3)
    q = canonical_sign(random_quats(rng, 500))
    np.testing.assert_allclose(rot_to_quat(quat_to_rot(q)), q, atol=1e-10)
    R = quat_to_rot(random_quats(rng, 500))
    np.testing.assert_allclose(quat_to_rot(rot_to_quat(R)), R, atol=1e-10)


def test_canonical_sign_tie_break():
    np.testing.assert_array_equal(canonical_sign([0.0, 0.0, -1.0, 0.0]), [0.0, 0.0, 1.0, 0.0])
    np.testing.assert_array_equal(canonical_sign([-0.6, 0.8, 0.0, 0.0]), [0.6, -0.8, 0.0, 0.0])


# exponential step


def test_quat_exp_step_examples():
    q = quat_normalize([0.3, -0.4, 0.5, 0.2])
    np.testing.assert_allclose(quat_exp_step(q, [0, 0, 0]), q, rtol=0, atol=1e-15)
    np.testing.assert_allclose(quat_exp_step(Q_IDENTITY, [0, 0, np.pi]), [0, 0, 0, 1], atol=1e-15)


def test_exp_step_matches_right_multiplication():
    rng = np.random.default_rng(4)
    q = random_quats(rng, 500)
    w = rng.normal(scale=2.0, size=(500, 3))
    np.testing.assert_allclose(quat_to_rot(quat_exp_step(q, w)), quat_to_rot(q) @ exp_so3(w), atol=1e-10)


def test_exp_step_keeps_unit_norm():
    rng = np.random.default_rng(5)
    q = random_quats(rng, 10)
    for _ in range(1000):
        q = quat_exp_step(q, rng.normal(scale=0.1, size=(10, 3)))
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0, atol=1e-12)


def test_quat_log_inverts_exp():
    rng = np.random.default_rng(6)
    w = rng.normal(size=(200, 3))
    w *= np.minimum(1.0, 3.0 / np.linalg.norm(w, axis=1))[:, None]
    np.testing.assert_allclose(quat_log(quat_exp_step(Q_IDENTITY, w)), w, atol=1e-12)
    np.testing.assert_allclose(quat_log(Q_IDENTITY), 0.0)


# distance


def test_dist_sq_frobenius_examples():
    rng = np.random.default_rng(7)
    R1, R2, Q = quat_to_rot(random_quats(rng, 3))
    assert dist_sq_frobenius(R1, R1) == 0.0
    assert dist_sq_frobenius(np.eye(3), np.diag([-1.0, -1.0, 1.0])) == 8.0
    np.testing.assert_allclose(dist_sq_frobenius(Q @ R1, Q @ R2), dist_sq_frobenius(R1, R2), rtol=1e-12)
    np.testing.assert_allclose(dist_sq_frobenius(R1, R2), dist_sq_frobenius(R2, R1))
    assert dist_sq_frobenius(R1, R2) <= 8.0


def test_lie_deriv_dist_sq_examples():
    for n in (1, 2, 3):
        assert lie_deriv_dist_sq(np.eye(3), np.eye(3), n) == 0.0
    # tr(E3 Rz(π/2)ᵀ) = 2, so the derivative is -4
    np.testing.assert_allclose(lie_deriv_dist_sq(np.eye(3), exp_so3([0, 0, np.pi / 2]), 3), -4.0, atol=1e-14)
    with pytest.raises(ValueError):
        lie_deriv_dist_sq(np.eye(3), np.eye(3), 0)


def test_lie_deriv_dist_sq_finite_differences():
    rng = np.random.default_rng(8)
    Ri = quat_to_rot(random_quats(rng, 1000))
    Rj = quat_to_rot(random_quats(rng, 1000))
    tau = 1e-5
    for n in (1, 2, 3):
        e = np.zeros(3)
        e[n - 1] = tau
        fd = (dist_sq_frobenius(Ri @ exp_so3(e), Rj) - dist_sq_frobenius(Ri @ exp_so3(-e), Rj)) / (2 * tau)
        np.testing.assert_allclose(lie_deriv_dist_sq(Ri, Rj, n), fd, atol=1e-6)


# averaging and sampling


def test_quat_mean_examples():
    q = quat_normalize([0.9, 0.1, -0.3, 0.2])
    np.testing.assert_allclose(quat_mean(np.tile(q, (5, 1))), q, atol=1e-14)
    np.testing.assert_allclose(quat_mean(np.stack([q, -q])), q, atol=1e-14)
    rng = np.random.default_rng(9)
    cloud = sample_concentrated(q, np.deg2rad(5.0) ** 2 * np.eye(3), 400, rng)
    assert rotation_angle_error(quat_mean(cloud), q) < np.deg2rad(1.0)


def test_quat_mean_matches_brute_force_eigendecomposition():
    rng = np.random.default_rng(10)
    q = sample_concentrated(quat_normalize([1, 2, 3, 4]), 0.2 * np.eye(3), 50, rng)
    vals, vecs = np.linalg.eig(q.T @ q / len(q))
    top = np.real(vecs[:, np.argmax(np.real(vals))])
    np.testing.assert_allclose(quat_mean(q), canonical_sign(top / np.linalg.norm(top)), atol=1e-12)


def test_quat_mean_sign_flip_invariance():
    rng = np.random.default_rng(11)
    q = sample_concentrated(Q_IDENTITY, 0.3 * np.eye(3), 40, rng)
    flips = np.where(rng.random(40) < 0.5, -1.0, 1.0)[:, None]
    np.testing.assert_allclose(quat_mean(q * flips), quat_mean(q), atol=1e-14)


def test_quat_mean_degenerate_spectrum():
    axes = np.eye(4)
    with pytest.raises(DegenerateSpectrum):
        quat_mean(axes)


def test_sample_concentrated_zero_covariance():
    q = quat_normalize([1, 1, 0, 0])
    out = sample_concentrated(q, np.zeros((3, 3)), 7, np.random.default_rng(0))
    np.testing.assert_allclose(out, np.tile(q, (7, 1)), atol=1e-15)


def test_sample_concentrated_covariance():
    n, s0 = 20000, np.deg2rad(10.0)
    q = quat_normalize([0.5, 0.5, -0.5, 0.5])
    out = sample_concentrated(q, s0**2 * np.eye(3), n, np.random.default_rng(12))
    chi = tangent_offsets(out, q)
    cov = chi.T @ chi / n
    np.testing.assert_allclose(cov / s0**2, np.eye(3), atol=3 / np.sqrt(n) * 3)
    np.testing.assert_allclose(np.diag(cov) / s0**2, 1.0, atol=3 * np.sqrt(2 / n) * 3)


def test_sample_concentrated_deterministic():
    a = sample_concentrated(Q_IDENTITY, 0.1 * np.eye(3), 10, np.random.default_rng(5))
    b = sample_concentrated(Q_IDENTITY, 0.1 * np.eye(3), 10, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)


# error metric


def test_rotation_angle_error_examples():
    rng = np.random.default_rng(13)
    q = random_quats(rng, 1)[0]
    assert rotation_angle_error(q, q) == pytest.approx(0.0, abs=1e-7)
    assert rotation_angle_error(q, -q) == pytest.approx(0.0, abs=1e-7)
    for axis in np.eye(3):
        half_turn = np.concatenate([[0.0], axis])
        assert rotation_angle_error(Q_IDENTITY, half_turn) == pytest.approx(np.pi)


@settings(max_examples=50)
@given(quat, quat)
def test_rotation_angle_error_symmetric_and_sign_invariant(p, q):
    e = rotation_angle_error(p, q)
    assert 0.0 <= e <= np.pi
    np.testing.assert_allclose(rotation_angle_error(q, p), e, atol=1e-12)
    np.testing.assert_allclose(rotation_angle_error(-p, q), e, atol=1e-12)
    np.testing.assert_allclose(rotation_angle_error(p, -q), e, atol=1e-12)
