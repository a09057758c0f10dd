"""Property-based sweeps over random inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from magmcmc.diagnostics import effective_sample_size
from magmcmc.integrator import IntegratorParams, constrained_step
from magmcmc.magnetic import MagneticField, PhaseState, euclidean_magnetic_step, factorize, validate_skew
from magmcmc.manifolds import Sphere, sample_momentum
from magmcmc.targets import bvmf_target

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 7)


def skew(dim, seed, scale=1.0):
    X = np.random.default_rng(seed).normal(size=(dim, dim))
    return scale * (X - X.T) / 2


@given(dims, seeds, st.floats(1e-3, 50.0))
def test_factorization_reconstructs_field(dim, seed, scale):
    L = skew(dim, seed, scale)
    f = factorize(validate_skew(L))
    assert 2 * f.frequencies.size + f.null_basis.shape[1] == dim
    assert np.all(f.frequencies > 0)
    assert np.max(np.abs(f.negative_field() + L), initial=0.0) <= 1e-10 * max(1.0, scale)


@given(st.integers(2, 6), seeds)
def test_factorization_with_embedded_zero_blocks(dim, seed):
    L = np.zeros((dim + 2, dim + 2))
    L[:dim, :dim] = skew(dim, seed)
    f = factorize(validate_skew(L))
    assert f.null_basis.shape[1] >= 2
    assert np.max(np.abs(f.negative_field() + L)) <= 1e-10


@given(dims, seeds, st.floats(-3.0, 3.0))
def test_kinetic_exponential_is_orthogonal_group(dim, seed, eps):
    f = factorize(validate_skew(skew(dim, seed)))
    E, _ = f.kinetic_matrices(eps)
    Einv, _ = f.kinetic_matrices(-eps)
    np.testing.assert_allclose(E.T @ E, np.eye(dim), atol=1e-12)
    np.testing.assert_allclose(E @ Einv, np.eye(dim), atol=1e-12)


@given(st.integers(2, 6), seeds)
def test_sphere_projection_idempotent_and_tangent(dim, seed):
    rng = np.random.default_rng(seed)
    S = Sphere(dim)
    q = rng.normal(size=dim)
    q /= np.linalg.norm(q)
    v = S.project(q, rng.normal(size=dim))
    np.testing.assert_allclose(S.project(q, v), v, atol=1e-14)
    assert abs(S.jacobian(q) @ v) <= 1e-12


@given(st.integers(1, 6), seeds, st.floats(1e-3, 0.2))
def test_euclidean_round_trip(dim, seed, eps):
    rng = np.random.default_rng(seed)
    f = MagneticField(skew(dim, seed)).factorization
    grad = lambda q: q + 0.1 * q**3  # noqa: E731
    z = PhaseState(rng.normal(size=dim), rng.normal(size=dim))
    back = euclidean_magnetic_step(euclidean_magnetic_step(z, grad, f, eps), grad, f, -eps)
    assert np.max(np.abs(back.as_vector() - z.as_vector())) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), seeds, st.floats(1e-3, 0.1))
def test_sphere_step_round_trip_and_feasibility(dim, seed, eps):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(dim, dim))
    t = bvmf_target(A @ A.T / dim, rng.normal(size=dim))
    f = MagneticField(skew(dim, seed)).factorization
    q = rng.normal(size=dim)
    q /= np.linalg.norm(q)
    s = PhaseState(q, sample_momentum(t.manifold, q, rng))
    params = IntegratorParams(eps, newton_tol=1e-13)
    out, _ = constrained_step(s, t, f, params)
    assert t.manifold.residual(out.q) <= 1e-12
    assert abs(t.manifold.jacobian(out.q) @ out.p)[0] <= 1e-10
    back, _ = constrained_step(out, t, f, params.reversed())
    assert np.max(np.abs(back.as_vector() - s.as_vector())) <= 1e-8


@given(seeds, st.integers(10, 500), st.floats(1.0, 1e4))
def test_ess_is_positive_and_capped(seed, n, ceiling):
    x = np.random.default_rng(seed).normal(size=n)
    e = effective_sample_size(x, ceiling)
    assert 0 < e <= ceiling
