"""Skew-symmetric fields and the split flows of the Euclidean magnetic step.

The Hamiltonian H(q, p) = U(q) + p.p/2 is split as U/2 + p.p/2 + U/2. Both
pieces have closed-form flows under the magnetic structure

    J_mag = [[L, I], [-I, 0]],   q' = p,   p' = -grad U(q) - L p,

so one step is the symmetric composition potential-kinetic-potential.

The kinetic flow needs exp(-eps L) and its time integral. Instead of a complex
eigendecomposition of -L we keep a real block form: L is split into 2-D
rotation planes (u_k, v_k, omega_k) with -L = omega_k (u_k v_k^T - v_k u_k^T)
on each plane, plus an orthonormal basis of its kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from magmcmc.errors import NonFiniteGradient, NotSkewSymmetric, NumericalFailure

SKEW_TOL = 1e-12
ZERO_FREQUENCY = 1e-10

GradientOracle = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class PhaseState:
    """Position/momentum pair in ambient coordinates."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.shape != p.shape or q.ndim != 1:
            raise ValueError(f"q and p must be 1-D with equal shape, got {q.shape} and {p.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_vector(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        m = z.shape[0] // 2
        return cls(z[:m].copy(), z[m:].copy())


@dataclass(frozen=True)
class SkewMatrix:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def validate_skew(A) -> SkewMatrix:
    """Return the skew part of ``A`` after checking it is skew to 1e-12."""
    A = np.array(A, dtype=float, ndmin=2)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    defect = np.max(np.abs(A + A.T)) if A.size else 0.0
    if not defect <= SKEW_TOL:
        raise NotSkewSymmetric(f"symmetry defect {defect:.3e} exceeds {SKEW_TOL}")
    S = 0.5 * (A - A.T)
    np.fill_diagonal(S, 0.0)
    S.setflags(write=False)
    return SkewMatrix(S)


def skew_from_gaussian(dim: int, rng: np.random.Generator) -> SkewMatrix:
    """(Z - Z^T)/2 for a standard normal Z; off-diagonal entries have variance 1/2."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    Z = rng.standard_normal((dim, dim))
    S = 0.5 * (Z - Z.T)
    S.setflags(write=False)
    return SkewMatrix(S)


@dataclass(frozen=True)
class SpectralFactorization:
    """Real block factorization of a skew matrix.

    Columns ``plane_u[:, k]`` and ``plane_v[:, k]`` span the k-th rotation
    plane with frequency ``frequencies[k] > 0``; ``null_basis`` spans ker L.
    """

    plane_u: np.ndarray
    plane_v: np.ndarray
    frequencies: np.ndarray
    null_basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.plane_u.shape[0]

    @property
    def rotation_blocks(self):
        return [
            (np.column_stack([self.plane_u[:, k], self.plane_v[:, k]]), float(w))
            for k, w in enumerate(self.frequencies)
        ]

    def negative_field(self) -> np.ndarray:
        """Rebuild -L from the blocks."""
        U, V, w = self.plane_u, self.plane_v, self.frequencies
        return (U * w) @ V.T - (V * w) @ U.T

    def kinetic_matrices(self, eps: float):
        """Return (exp(-eps L), int_0^eps exp(-t L) dt) as dense matrices."""
        U, V, w = self.plane_u, self.plane_v, self.frequencies
        N = self.null_basis
        theta = eps * w
        c = np.cos(theta)
        s = np.sin(theta)
        sym = (U * c) @ U.T + (V * c) @ V.T
        rot = (U * s) @ V.T - (V * s) @ U.T
        expo = N @ N.T + sym + rot
        # 1 - cos(theta) written as 2 sin^2(theta/2) to keep precision at small theta
        a = s / w
        b = 2.0 * np.sin(0.5 * theta) ** 2 / w
        integral = (
            eps * (N @ N.T)
            + (U * a) @ U.T
            + (V * a) @ V.T
            + (U * b) @ V.T
            - (V * b) @ U.T
        )
        return expo, integral


def factorize(L: SkewMatrix) -> SpectralFactorization:
    """Block-diagonalize a skew matrix with a real Schur decomposition.

    For a normal matrix the real Schur form is block diagonal with 2x2 blocks
    [[0, b], [-b, 0]]. Frequencies at or below 1e-10 are folded into the
    kernel, where the kinetic flow's limit is eps * Id.
    """
    A = np.asarray(L.entries if isinstance(L, SkewMatrix) else L, dtype=float)
    m = A.shape[0]
    if not np.all(np.isfinite(A)):
        raise NumericalFailure("field contains non-finite entries")
    try:
        T, Z = scipy.linalg.schur(A, output="real")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"Schur decomposition failed: {exc}") from exc

    us, vs, ws, null = [], [], [], []
    i = 0
    while i < m:
        if i + 1 < m and T[i + 1, i] != 0.0:
            b, c = T[i, i + 1], T[i + 1, i]
            omega = 0.5 * (abs(b) + abs(c))
            z1, z2 = Z[:, i], Z[:, i + 1]
            if omega <= ZERO_FREQUENCY:
                null.extend([z1, z2])
            elif b > 0:
                # L = b (z1 z2^T - z2 z1^T), so -L = b (z2 z1^T - z1 z2^T)
                us.append(z2)
                vs.append(z1)
                ws.append(omega)
            else:
                us.append(z1)
                vs.append(z2)
                ws.append(omega)
            i += 2
        else:
            null.append(Z[:, i])
            i += 1

    def stack(cols):
        return np.column_stack(cols) if cols else np.zeros((m, 0))

    fact = SpectralFactorization(stack(us), stack(vs), np.array(ws, dtype=float), stack(null))
    for arr in (fact.plane_u, fact.plane_v, fact.frequencies, fact.null_basis):
        arr.setflags(write=False)
    return fact


class MagneticField:
    """A fixed skew-symmetric field with its factorization computed once."""

    def __init__(self, L):
        self.skew = L if isinstance(L, SkewMatrix) else validate_skew(L)
        self.factorization = factorize(self.skew)

    @classmethod
    def zero(cls, dim: int) -> "MagneticField":
        return cls(np.zeros((dim, dim)))

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, scale: float = 1.0) -> "MagneticField":
        S = skew_from_gaussian(dim, rng).entries
        return cls(scale * S)

    @property
    def matrix(self) -> np.ndarray:
        return self.skew.entries

    @property
    def dim(self) -> int:
        return self.skew.dim

    @property
    def is_zero(self) -> bool:
        return not np.any(self.skew.entries)

    def __repr__(self):
        return f"MagneticField(dim={self.dim}, blocks={len(self.factorization.frequencies)})"


def checked_gradient(grad_u: GradientOracle, q: np.ndarray) -> np.ndarray:
    g = np.asarray(grad_u(q), dtype=float)
    # a sum is finite iff every entry is (barring overflow, which is also a failure)
    if not math.isfinite(g.sum()):
        raise NonFiniteGradient("gradient oracle returned non-finite values")
    return g


def flow_potential(state: PhaseState, grad_u: GradientOracle, eps: float) -> PhaseState:
    """Exact flow of U/2 for time eps: q fixed, p -= eps/2 grad U(q)."""
    g = checked_gradient(grad_u, state.q)
    return PhaseState(state.q, state.p - 0.5 * eps * g)


def flow_kinetic(state: PhaseState, fact: SpectralFactorization, eps: float) -> PhaseState:
    """Exact flow of p.p/2 under the magnetic structure for time eps."""
    if fact.dim != state.dim:
        raise ValueError(f"factorization has dim {fact.dim}, state has dim {state.dim}")
    expo, integral = fact.kinetic_matrices(eps)
    return PhaseState(state.q + integral @ state.p, expo @ state.p)


def _step_arrays(q, p, grad_u, expo, integral, eps):
    p_half = p - 0.5 * eps * checked_gradient(grad_u, q)
    q_new = q + integral @ p_half
    p_bar = expo @ p_half
    p_new = p_bar - 0.5 * eps * checked_gradient(grad_u, q_new)
    return q_new, p_new


def euclidean_magnetic_step(
    state: PhaseState, grad_u: GradientOracle, fact: SpectralFactorization, eps: float
) -> PhaseState:
    """One potential-kinetic-potential step in R^m."""
    expo, integral = fact.kinetic_matrices(eps)
    q, p = _step_arrays(state.q, state.p, grad_u, expo, integral, eps)
    return PhaseState(q, p)


def magnetic_structure_matrix(L) -> np.ndarray:
    """The 2m x 2m matrix [[L, I], [-I, 0]]."""
    L = np.asarray(L.entries if isinstance(L, SkewMatrix) else L, dtype=float)
    m = L.shape[0]
    I = np.eye(m)
    return np.block([[L, I], [-I, np.zeros((m, m))]])
