"""Embedded manifolds M = {q : g(q) = 0} with constraint Jacobians and projections.

Every manifold exposes ``constraint`` (g), ``jacobian`` (G), and
``project`` (orthogonal projection of an ambient vector onto ker G(q), which
for H = U + p.p/2 is the cotangent space). Matrix-valued points are flattened
column-major.
"""

from __future__ import annotations

import numpy as np

from magmcmc.errors import RankDeficient, WrongComponent

FEASIBILITY_TOL = 1e-9


class ManifoldSpec:
    """Base class. Subclasses set ``ambient_dim``/``constraint_dim`` and
    implement ``constraint`` and ``jacobian``; ``project`` falls back to the
    normal-equations formula v - G^T (G G^T)^{-1} G v."""

    ambient_dim: int
    constraint_dim: int
    name = "manifold"

    def constraint(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def project(self, q: np.ndarray, v: np.ndarray) -> np.ndarray:
        return generic_projection(self.jacobian(q), v)

    def default_point(self) -> np.ndarray:
        raise NotImplementedError

    def check_initial_point(self, q: np.ndarray) -> None:
        """Hook for component checks that a level-set constraint cannot express."""

    def residual(self, q: np.ndarray) -> float:
        g = self.constraint(q)
        return float(np.max(np.abs(g))) if g.size else 0.0

    def is_feasible(self, q, tol: float = FEASIBILITY_TOL) -> bool:
        return self.residual(np.asarray(q, dtype=float)) <= tol

    def __repr__(self):
        return f"{type(self).__name__}(m={self.ambient_dim}, k={self.constraint_dim})"


def generic_projection(G: np.ndarray, v: np.ndarray) -> np.ndarray:
    if G.shape[0] == 0:
        return np.array(v, dtype=float)
    return v - G.T @ np.linalg.solve(G @ G.T, G @ v)


class Euclidean(ManifoldSpec):
    """R^m with no constraints (k = 0)."""

    name = "euclidean"

    def __init__(self, dim: int):
        self.ambient_dim = int(dim)
        self.constraint_dim = 0

    def constraint(self, q):
        return np.zeros(0)

    def jacobian(self, q):
        return np.zeros((0, self.ambient_dim))

    def project(self, q, v):
        return np.array(v, dtype=float)

    def default_point(self):
        return np.zeros(self.ambient_dim)


class Affine(ManifoldSpec):
    name = "affine"

    def __init__(self, A, b):
        A = np.array(A, dtype=float, ndmin=2)
        b = np.array(b, dtype=float, ndmin=1)
        k, m = A.shape
        if b.shape != (k,):
            raise ValueError(f"b must have shape ({k},), got {b.shape}")
        smin = np.linalg.svd(A, compute_uv=False).min() if k else np.inf
        if k > m or smin <= 1e-10:
            raise RankDeficient(f"A is not full row rank (smallest singular value {smin:.3e})")
        self.A, self.b = A, b
        self.ambient_dim, self.constraint_dim = m, k
        self._gram_inv = np.linalg.inv(A @ A.T)
        self._proj = np.eye(m) - A.T @ self._gram_inv @ A

    def constraint(self, q):
        return self.A @ q - self.b

    def jacobian(self, q):
        return self.A

    def project(self, q, v):
        return self._proj @ v

    @property
    def projector(self) -> np.ndarray:
        return self._proj

    def default_point(self):
        return self.A.T @ (self._gram_inv @ self.b)


class Sphere(ManifoldSpec):
    """Unit sphere in R^m: g(q) = q.q - 1, G(q) = 2 q^T."""

    name = "sphere"

    def __init__(self, dim: int):
        if dim < 2:
            raise ValueError("sphere needs ambient dimension >= 2")
        self.ambient_dim, self.constraint_dim = int(dim), 1

    def constraint(self, q):
        return np.array([q @ q - 1.0])

    def jacobian(self, q):
        return 2.0 * q[None, :]

    def project(self, q, v):
        return v - (q @ v) / (q @ q) * q

    def default_point(self):
        e = np.zeros(self.ambient_dim)
        e[0] = 1.0
        return e


class Stiefel(ManifoldSpec):
    """n x r matrices with orthonormal columns, flattened column-major.

    Only the upper triangle (with diagonal) of Q^T Q - I is constrained, which
    keeps G full rank with k = r(r+1)/2 rows.
    """

    name = "stiefel"

    def __init__(self, n: int, r: int):
        if not n >= r >= 1:
            raise ValueError(f"need n >= r >= 1, got n={n}, r={r}")
        self.n, self.r = int(n), int(r)
        self.ambient_dim = self.n * self.r
        self.constraint_dim = self.r * (self.r + 1) // 2
        self._iu = np.triu_indices(self.r)
        self._eye = np.eye(self.r)
        # d(Q^T Q)_ij / dQ[:, c] = delta_ci Q[:, j] + delta_cj Q[:, i]; scatter
        # indices for the two terms (they coincide on the diagonal i == j)
        i, j = self._iu
        rows = np.repeat(np.arange(self.constraint_dim), self.n)
        span = np.tile(np.arange(self.n), self.constraint_dim)
        self._scatter = (rows, np.repeat(i, self.n) * self.n + span, np.repeat(j, self.n) * self.n + span)

    def as_matrix(self, q) -> np.ndarray:
        return np.reshape(q, (self.n, self.r), order="F")

    def flatten(self, Q) -> np.ndarray:
        return np.reshape(Q, -1, order="F")

    def constraint(self, q):
        Q = self.as_matrix(q)
        return (Q.T @ Q - self._eye)[self._iu]

    def jacobian(self, q):
        Q = self.as_matrix(q)
        i, j = self._iu
        rows, cols_i, cols_j = self._scatter
        G = np.zeros((self.constraint_dim, self.ambient_dim))
        G[rows, cols_i] = Q[:, j].T.ravel()
        G[rows, cols_j] += Q[:, i].T.ravel()
        return G

    def project(self, q, v):
        Q = self.as_matrix(q)
        V = self.as_matrix(v)
        X = Q.T @ V
        return self.flatten(V - Q @ (0.5 * (X + X.T)))

    def default_point(self):
        return self.flatten(np.eye(self.n, self.r))

    def retract(self, q) -> np.ndarray:
        """Polar-decomposition retraction, for building initial points only."""
        U, _, Vt = np.linalg.svd(self.as_matrix(q), full_matrices=False)
        return self.flatten(U @ Vt)


class SpecialOrthogonal(Stiefel):
    """SO(n) as Stiefel(n, n) plus a determinant check on initial points.

    det = +1 is not a level-set constraint; continuous flows stay on the
    component they start on, so the sign is only checked at chain start.
    """

    name = "so"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("SO(n) needs n >= 2")
        super().__init__(n, n)

    def check_initial_point(self, q):
        d = np.linalg.det(self.as_matrix(q))
        if d < 0:
            raise WrongComponent(f"initial point has determinant {d:.6f} < 0")

    def retract(self, q):
        Q = self.as_matrix(super().retract(q))
        if np.linalg.det(Q) < 0:
            Q[:, -1] *= -1
        return self.flatten(Q)


class ProductManifold(ManifoldSpec):
    """Cartesian product; integer blocks are unconstrained R^d factors."""

    name = "product"

    def __init__(self, blocks):
        self.blocks = [Euclidean(b) if isinstance(b, (int, np.integer)) else b for b in blocks]
        if not self.blocks:
            raise ValueError("product needs at least one block")
        self.offsets = np.cumsum([0] + [b.ambient_dim for b in self.blocks])
        self.row_offsets = np.cumsum([0] + [b.constraint_dim for b in self.blocks])
        self.ambient_dim = int(self.offsets[-1])
        self.constraint_dim = int(self.row_offsets[-1])

    def split(self, q):
        return [q[self.offsets[i]:self.offsets[i + 1]] for i in range(len(self.blocks))]

    def constraint(self, q):
        parts = [b.constraint(x) for b, x in zip(self.blocks, self.split(q))]
        return np.concatenate(parts) if parts else np.zeros(0)

    def jacobian(self, q):
        G = np.zeros((self.constraint_dim, self.ambient_dim))
        for i, (b, x) in enumerate(zip(self.blocks, self.split(q))):
            r0, r1 = self.row_offsets[i], self.row_offsets[i + 1]
            c0, c1 = self.offsets[i], self.offsets[i + 1]
            if r1 > r0:
                G[r0:r1, c0:c1] = b.jacobian(x)
        return G

    def project(self, q, v):
        return np.concatenate(
            [b.project(x, w) for b, x, w in zip(self.blocks, self.split(q), self.split(v))]
        )

    def default_point(self):
        return np.concatenate([b.default_point() for b in self.blocks])

    def check_initial_point(self, q):
        for b, x in zip(self.blocks, self.split(q)):
            b.check_initial_point(x)


def make_affine(A, b) -> Affine:
    return Affine(A, b)


def make_sphere(m: int) -> Sphere:
    return Sphere(m)


def make_stiefel(n: int, r: int) -> Stiefel:
    return Stiefel(n, r)


def make_special_orthogonal(n: int) -> SpecialOrthogonal:
    return SpecialOrthogonal(n)


def sample_momentum(spec: ManifoldSpec, q: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw p ~ Normal(0, I) conditioned on G(q) p = 0 by projecting an ambient draw."""
    z = rng.standard_normal(spec.ambient_dim)
    return spec.project(q, z)


def newton_retract(spec: ManifoldSpec, q, tol: float = 1e-14, max_iter: int = 50) -> np.ndarray:
    """Pull q back onto the manifold along rows of G (Gauss-Newton).

    Used to build feasible perturbations in tests and checks; the integrator
    itself never retracts.
    """
    q = np.array(q, dtype=float)
    if spec.constraint_dim == 0:
        return q
    for _ in range(max_iter):
        g = spec.constraint(q)
        if np.max(np.abs(g)) <= tol:
            break
        G = spec.jacobian(q)
        q = q - G.T @ np.linalg.solve(G @ G.T, g)
    return q
