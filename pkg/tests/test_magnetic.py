import numpy as np
import pytest
import scipy.linalg
from scipy.integrate import solve_ivp

from magmcmc.errors import NonFiniteGradient, NotSkewSymmetric
from magmcmc.magnetic import (
    MagneticField,
    PhaseState,
    euclidean_magnetic_step,
    factorize,
    flow_kinetic,
    flow_potential,
    magnetic_structure_matrix,
    skew_from_gaussian,
    validate_skew,
)


def test_validate_skew_examples():
    assert not np.any(validate_skew(np.zeros((3, 3))).entries)
    S = np.array([[0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_array_equal(validate_skew(S).entries, S)
    with pytest.raises(NotSkewSymmetric):
        validate_skew(np.array([[0.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        validate_skew(np.ones((2, 3)))


def test_validate_skew_cleans_roundoff():
    S = np.array([[1e-14, 2.0], [-2.0 + 1e-14, 0.0]])
    out = validate_skew(S).entries
    np.testing.assert_array_equal(out, -out.T)
    assert out[0, 0] == 0.0


def test_skew_from_gaussian_small_and_deterministic():
    assert skew_from_gaussian(1, np.random.default_rng(3)).entries.shape == (1, 1)
    assert not np.any(skew_from_gaussian(1, np.random.default_rng(3)).entries)
    a = skew_from_gaussian(4, np.random.default_rng(7)).entries
    b = skew_from_gaussian(4, np.random.default_rng(7)).entries
    np.testing.assert_array_equal(a, b)


def test_skew_from_gaussian_entry_variance():
    vals = np.array([skew_from_gaussian(4, np.random.default_rng(s)).entries[0, 1] for s in range(10_000)])
    assert abs(vals.var() - 0.5) <= 0.05 * 0.5


def test_factorize_trivial_cases():
    f = factorize(validate_skew(np.zeros((3, 3))))
    assert f.frequencies.size == 0
    np.testing.assert_allclose(f.null_basis @ f.null_basis.T, np.eye(3), atol=1e-14)

    f = factorize(validate_skew(np.array([[0.0, 2.0], [-2.0, 0.0]])))
    np.testing.assert_allclose(f.frequencies, [2.0])
    assert f.null_basis.shape == (2, 0)


def test_factorize_matches_complex_eigendecomposition(rng):
    L = skew_from_gaussian(5, rng)
    f = factorize(L)
    assert f.frequencies.size == 2 and f.null_basis.shape == (5, 1)
    assert np.max(np.abs(f.negative_field() + L.entries)) <= 1e-10
    # eigenvalues of a real skew matrix come in pairs +-i w
    w = np.sort(np.abs(np.linalg.eigvals(L.entries).imag))
    np.testing.assert_allclose(np.sort(np.concatenate([f.frequencies, f.frequencies, [0.0]])), w, atol=1e-10)
    # the frequencies also match the complex eigenvectors: -L x = i w x on each plane
    B = np.column_stack([f.plane_u, f.plane_v, f.null_basis])
    np.testing.assert_allclose(B.T @ B, np.eye(5), atol=1e-12)
    assert np.max(np.abs(L.entries @ f.null_basis)) <= 1e-10


def test_kinetic_matrices_match_expm_oracle(rng):
    L = skew_from_gaussian(6, rng).entries
    f = factorize(validate_skew(L))
    for eps in (0.3, -0.05, 1e-9, 2.0):
        expo, integral = f.kinetic_matrices(eps)
        np.testing.assert_allclose(expo, scipy.linalg.expm(-eps * L), atol=1e-12)
        # Van Loan block trick: expm([[-L, I], [0, 0]] eps) has int_0^eps exp(-tL) dt top right
        m = L.shape[0]
        big = np.zeros((2 * m, 2 * m))
        big[:m, :m] = -L
        big[:m, m:] = np.eye(m)
        np.testing.assert_allclose(integral, scipy.linalg.expm(eps * big)[:m, m:], atol=1e-12)


def test_flow_potential_examples():
    s = PhaseState(np.array([1.0, 0.0]), np.zeros(2))
    out = flow_potential(s, lambda q: q, 0.2)
    np.testing.assert_allclose(out.p, [-0.1, 0.0])
    np.testing.assert_array_equal(flow_potential(s, lambda q: q, 0.0).p, s.p)
    back = flow_potential(out, lambda q: q, -0.2)
    np.testing.assert_array_equal(back.q, s.q)
    np.testing.assert_allclose(back.p, s.p, atol=1e-17)


def test_flow_kinetic_zero_field(rng):
    q, p = rng.normal(size=3), rng.normal(size=3)
    out = flow_kinetic(PhaseState(q, p), MagneticField.zero(3).factorization, 0.7)
    np.testing.assert_allclose(out.q, q + 0.7 * p, rtol=0, atol=1e-15)
    np.testing.assert_array_equal(out.p, p)


def test_flow_kinetic_matches_ode_oracle():
    w, eps = 1.7, 0.9
    L = np.array([[0.0, w], [-w, 0.0]])
    q0, p0 = np.array([0.3, -0.2]), np.array([0.5, 1.1])
    sol = solve_ivp(lambda t, y: np.concatenate([y[2:], -L @ y[2:]]), (0.0, eps),
                    np.concatenate([q0, p0]), method="DOP853", rtol=1e-13, atol=1e-14)
    out = flow_kinetic(PhaseState(q0, p0), MagneticField(L).factorization, eps)
    np.testing.assert_allclose(out.q, sol.y[:2, -1], atol=1e-8)
    np.testing.assert_allclose(out.p, sol.y[2:, -1], atol=1e-8)


def test_flow_kinetic_preserves_speed(rng):
    for _ in range(20):
        m = int(rng.integers(2, 8))
        f = MagneticField.random(m, rng, scale=3.0).factorization
        p = rng.normal(size=m)
        out = flow_kinetic(PhaseState(rng.normal(size=m), p), f, float(rng.uniform(-2, 2)))
        assert abs(np.linalg.norm(out.p) - np.linalg.norm(p)) <= 1e-12 * max(1, np.linalg.norm(p))


def _leapfrog(q, p, grad, eps):
    p = p - 0.5 * eps * grad(q)
    q = q + eps * p
    return q, p - 0.5 * eps * grad(q)


def test_zero_field_is_leapfrog_bit_for_bit(rng):
    P = np.diag([1.0, 2.0, 5.0])
    grad = lambda q: P @ q  # noqa: E731
    f = MagneticField.zero(3).factorization
    q, p = rng.normal(size=3), rng.normal(size=3)
    out = euclidean_magnetic_step(PhaseState(q, p), grad, f, 0.1)
    ql, pl = _leapfrog(q, p, grad, 0.1)
    np.testing.assert_array_equal(out.q, ql)
    np.testing.assert_array_equal(out.p, pl)


def test_euclidean_step_round_trip(rng):
    for _ in range(50):
        m = int(rng.integers(2, 7))
        X = rng.normal(size=(m, m))
        P = X @ X.T / m + np.eye(m)
        grad = lambda q, P=P: P @ q  # noqa: E731
        f = MagneticField.random(m, rng).factorization
        eps = float(rng.uniform(1e-3, 0.2))
        z = PhaseState(rng.normal(size=m), rng.normal(size=m))
        back = euclidean_magnetic_step(euclidean_magnetic_step(z, grad, f, eps), grad, f, -eps)
        assert np.max(np.abs(back.as_vector() - z.as_vector())) <= 1e-10


def test_euclidean_step_symplectic_fd(rng):
    m = 3
    L = skew_from_gaussian(m, rng).entries
    f = MagneticField(L).factorization
    grad = lambda q: q + 0.3 * q**3  # noqa: E731
    eps, h = 0.1, 1e-5
    z0 = rng.normal(size=2 * m)

    def step(z):
        s = euclidean_magnetic_step(PhaseState(z[:m], z[m:]), grad, f, eps)
        return s.as_vector()

    J = np.column_stack([(step(z0 + h * e) - step(z0 - h * e)) / (2 * h) for e in np.eye(2 * m)])
    Jm = magnetic_structure_matrix(L)
    assert np.max(np.abs(J.T @ Jm @ J - Jm)) <= 1e-6


def test_magnetic_structure_matrix_layout():
    L = np.array([[0.0, 1.5], [-1.5, 0.0]])
    J = magnetic_structure_matrix(L)
    np.testing.assert_array_equal(J[:2, :2], L)
    np.testing.assert_array_equal(J[:2, 2:], np.eye(2))
    np.testing.assert_array_equal(J[2:, :2], -np.eye(2))
    np.testing.assert_array_equal(J[2:, 2:], np.zeros((2, 2)))


def test_nonfinite_gradient_is_reported():
    s = PhaseState(np.zeros(2), np.zeros(2))
    with pytest.raises(NonFiniteGradient):
        euclidean_magnetic_step(s, lambda q: np.array([np.nan, 0.0]), MagneticField.zero(2).factorization, 0.1)


def test_phase_state_vector_round_trip():
    s = PhaseState(np.arange(3.0), -np.arange(3.0))
    t = PhaseState.from_vector(s.as_vector())
    np.testing.assert_array_equal(t.q, s.q)
    np.testing.assert_array_equal(t.p, s.p)
    assert s.dim == 3
