"""Manifold-constrained magnetic integrator.

One step from (q, p) on the cotangent bundle:

    pbar  = p - eps/2 G(q)^T mu
    (q1, pbar1) = potential-kinetic-potential step of (q, pbar)
    0     = g(q1)                                   (fixes mu, Newton)
    p1    = pbar1 - eps/2 G(q1)^T mu'
    0     = G(q1) p1                                (fixes mu', normal equations)

The unconstrained step's position output is affine in its input momentum, so
q1(mu) = q1(0) - eps/2 K(eps) G(q)^T mu with K(eps) the kinetic-flow integral
matrix, and the Newton Jacobian is exact: -eps/2 G(q1(mu)) K(eps) G(q)^T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from magmcmc.errors import ConvergenceFailure, NumericalFailure, RankDeficient
from magmcmc.magnetic import PhaseState, SpectralFactorization, checked_gradient
from magmcmc.targets import TargetDensity

MOMENTUM_TOL = 1e-9


@dataclass(frozen=True)
class IntegratorParams:
    step_size: float
    num_steps: int = 1
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    # debug only: finite-difference Newton Jacobian instead of the exact one
    fd_jacobian: bool = False

    def __post_init__(self):
        if self.step_size == 0 or not np.isfinite(self.step_size):
            raise ValueError("step size must be finite and non-zero")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")

    def reversed(self) -> "IntegratorParams":
        return IntegratorParams(-self.step_size, self.num_steps, self.newton_tol,
                                self.newton_max_iter, self.fd_jacobian)


@dataclass(frozen=True)
class MultiplierSolve:
    mu: np.ndarray
    mu_prime: np.ndarray
    newton_iters: int
    converged: bool


def _solve_small(A, b):
    """np.linalg.solve with a scalar fast path for single-constraint manifolds."""
    if A.shape == (1, 1):
        a = A[0, 0]
        if a == 0.0 or not np.isfinite(a):
            raise np.linalg.LinAlgError("singular 1x1 system")
        return b / a
    return np.linalg.solve(A, b)


def _newton(manifold, G0, base, integral, eps, tol, max_iter, fd_jacobian=False):
    """Root of mu -> g(base + D mu), D = -eps/2 K G0^T, starting from mu = 0."""
    D = -0.5 * eps * (integral @ G0.T)
    mu = np.zeros(G0.shape[0])
    qn = base
    for it in range(max_iter + 1):
        f = manifold.constraint(qn)
        res = float(np.abs(f).max())
        if not math.isfinite(res):
            raise ConvergenceFailure(it, res)
        if res <= tol:
            return mu, it
        if it == max_iter:
            break
        if fd_jacobian:
            J = _fd_newton_jacobian(manifold, base, D, mu)
        else:
            J = manifold.jacobian(qn) @ D
        try:
            mu = mu - _solve_small(J, f)
        except np.linalg.LinAlgError:
            raise ConvergenceFailure(it + 1, res) from None
        qn = base + D @ mu
    raise ConvergenceFailure(max_iter, res)


def _fd_newton_jacobian(manifold, base, D, mu, h=1e-7):
    k = mu.shape[0]
    J = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        J[:, j] = (manifold.constraint(base + D @ (mu + e)) - manifold.constraint(base + D @ (mu - e))) / (2 * h)
    return J


def newton_lagrange(q, p, target: TargetDensity, fact: SpectralFactorization, eps: float,
                    tol: float = 1e-10, max_iter: int = 50):
    """Multiplier mu such that the unconstrained step from (q, p - eps/2 G^T mu) lands on M.

    Returns ``(mu, iterations)``; raises :class:`ConvergenceFailure` otherwise.
    """
    if eps == 0:
        raise ValueError("eps must be non-zero")
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    _, integral = fact.kinetic_matrices(eps)
    manifold = target.manifold
    G0 = manifold.jacobian(q)
    base = q + integral @ (p - 0.5 * eps * checked_gradient(target.grad_potential, q))
    return _newton(manifold, G0, base, integral, eps, tol, max_iter)


def solve_mu_prime(q_next, p_bar, G, eps: float) -> np.ndarray:
    """mu' solving (eps/2) G G^T mu' = G pbar."""
    G = np.atleast_2d(np.asarray(G, dtype=float))
    if G.shape[0] == 0:
        return np.zeros(0)
    gram = G @ G.T
    # reciprocal condition number via singular values of G
    sv = np.linalg.svd(G, compute_uv=False)
    if sv.min() <= 1e-12 * max(sv.max(), 1.0):
        raise RankDeficient(f"constraint Jacobian is rank deficient (min singular value {sv.min():.3e})")
    return np.linalg.solve(0.5 * eps * gram, G @ p_bar)


def _step(q, p, gq, manifold, grad_u, expo, integral, eps, tol, max_iter, fd_jacobian=False):
    """One constrained step on raw arrays. ``gq`` is grad U(q), reused from the
    previous step. Returns (q1, p1, grad U(q1), mu, mu', newton iterations)."""
    if manifold.constraint_dim == 0:
        p_half = p - 0.5 * eps * gq
        q1 = q + integral @ p_half
        g1 = checked_gradient(grad_u, q1)
        p1 = expo @ p_half - 0.5 * eps * g1
        return q1, p1, g1, np.zeros(0), np.zeros(0), 0

    G0 = manifold.jacobian(q)
    base = q + integral @ (p - 0.5 * eps * gq)
    mu, iters = _newton(manifold, G0, base, integral, eps, tol, max_iter, fd_jacobian)

    p_bar = p - 0.5 * eps * (G0.T @ mu)
    p_half = p_bar - 0.5 * eps * gq
    q1 = q + integral @ p_half
    g1 = checked_gradient(grad_u, q1)
    p_bar1 = expo @ p_half - 0.5 * eps * g1

    G1 = manifold.jacobian(q1)
    try:
        mu_prime = _solve_small(0.5 * eps * (G1 @ G1.T), G1 @ p_bar1)
    except np.linalg.LinAlgError:
        raise NumericalFailure("constraint Jacobian lost rank along the trajectory") from None
    p1 = p_bar1 - 0.5 * eps * (G1.T @ mu_prime)
    return q1, p1, g1, mu, mu_prime, iters


def constrained_step(state: PhaseState, target: TargetDensity, fact: SpectralFactorization,
                     params: IntegratorParams):
    """One step of the constrained integrator; returns (new state, MultiplierSolve)."""
    eps = params.step_size
    expo, integral = fact.kinetic_matrices(eps)
    gq = checked_gradient(target.grad_potential, state.q)
    q1, p1, _, mu, mu_prime, iters = _step(
        state.q, state.p, gq, target.manifold, target.grad_potential, expo, integral, eps,
        params.newton_tol, params.newton_max_iter, params.fd_jacobian,
    )
    return PhaseState(q1, p1), MultiplierSolve(mu, mu_prime, iters, True)


def integrate_arrays(q, p, manifold, grad_u, fact: SpectralFactorization, params: IntegratorParams,
                     record: bool = False, kinetic=None):
    """N constrained steps on raw arrays. Returns (q, p, trajectory, newton iterations).

    ``kinetic`` optionally supplies precomputed ``fact.kinetic_matrices(step_size)``.
    """
    eps = params.step_size
    expo, integral = kinetic if kinetic is not None else fact.kinetic_matrices(eps)
    gq = checked_gradient(grad_u, q)
    traj = [(q, p)] if record else None
    total = 0
    for n in range(params.num_steps):
        try:
            q, p, gq, _, _, iters = _step(q, p, gq, manifold, grad_u, expo, integral, eps,
                                          params.newton_tol, params.newton_max_iter,
                                          params.fd_jacobian)
        except ConvergenceFailure as exc:
            exc.step = n
            raise
        total += iters
        if record:
            traj.append((q, p))
    return q, p, traj, total


def integrate(state: PhaseState, target: TargetDensity, fact: SpectralFactorization,
              params: IntegratorParams, record: bool = False):
    """Run ``params.num_steps`` constrained steps.

    Returns ``(final state, trajectory or None, total Newton iterations)``; the
    trajectory includes the initial state.
    """
    q, p, traj, total = integrate_arrays(state.q, state.p, target.manifold, target.grad_potential,
                                         fact, params, record)
    trajectory: Optional[list] = [PhaseState(a, b) for a, b in traj] if record else None
    return PhaseState(q, p), trajectory, total
