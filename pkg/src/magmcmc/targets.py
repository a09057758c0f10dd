"""Target densities pi(q) ~ exp(-U(q)) paired with the manifold they live on."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln, log_ndtr

from magmcmc.errors import NonPositiveAlpha
from magmcmc.manifolds import Affine, Euclidean, ManifoldSpec, ProductManifold, Sphere, Stiefel


@dataclass(frozen=True)
class TargetDensity:
    manifold: ManifoldSpec
    potential: Callable[[np.ndarray], float]
    grad_potential: Callable[[np.ndarray], np.ndarray]
    name: str
    initial_point: Optional[np.ndarray] = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.manifold.ambient_dim

    def hamiltonian(self, q, p) -> float:
        return float(self.potential(q)) + 0.5 * float(p @ p)

    def start(self) -> np.ndarray:
        if self.initial_point is not None:
            return np.array(self.initial_point, dtype=float)
        return self.manifold.default_point()

    def shifted(self, constant: float) -> "TargetDensity":
        """Same density with U replaced by U + constant."""
        U = self.potential
        return TargetDensity(
            self.manifold, lambda q: U(q) + constant, self.grad_potential,
            f"{self.name}+const", self.initial_point, self.params,
        )


# -- affine Gaussian ---------------------------------------------------------

def gaussian_affine_target(mu, sigma_diag, A, b) -> TargetDensity:
    """Normal(mu, diag(sigma_diag)) restricted to {q : A q = b}."""
    mu = np.asarray(mu, dtype=float)
    sigma_diag = np.asarray(sigma_diag, dtype=float)
    if np.any(sigma_diag <= 0):
        raise ValueError("covariance diagonal must be positive")
    prec = 1.0 / sigma_diag
    manifold = Affine(A, b)

    def potential(q):
        d = q - mu
        return 0.5 * float(d @ (prec * d))

    def grad(q):
        return prec * (q - mu)

    # the conditioned mean is the mode; for the default setup it is mu itself
    start = conditioned_gaussian_moments(mu, sigma_diag, A, b)[0]
    return TargetDensity(manifold, potential, grad, "gaussian_affine", start,
                         {"mu": mu, "sigma_diag": sigma_diag})


def conditioned_gaussian_moments(mu, sigma_diag, A, b):
    """Mean and covariance of Normal(mu, Sigma) given A x = b."""
    mu = np.asarray(mu, dtype=float)
    S = np.diag(np.asarray(sigma_diag, dtype=float))
    A = np.array(A, dtype=float, ndmin=2)
    K = S @ A.T @ np.linalg.inv(A @ S @ A.T)
    mean = mu + K @ (np.asarray(b, dtype=float) - A @ mu)
    cov = S - K @ A @ S
    return mean, 0.5 * (cov + cov.T)


DEFAULT_AFFINE_A = np.array([[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, 1.0]])
DEFAULT_AFFINE_B = np.zeros(2)
DEFAULT_AFFINE_MU = np.zeros(4)
DEFAULT_AFFINE_SIGMA = np.array([1.0, 1.0, 0.01, 0.01])


# -- Bingham-von Mises-Fisher ------------------------------------------------

def bvmf_target(A, b) -> TargetDensity:
    """pi(q) ~ exp(b.q + q^T A q) on the unit sphere."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + A.T)
    b = np.asarray(b, dtype=float)
    m = b.shape[0]

    def potential(q):
        return -float(b @ q) - float(q @ A @ q)

    def grad(q):
        return -b - 2.0 * (A @ q)

    start = b / np.linalg.norm(b) if np.any(b) else None
    return TargetDensity(Sphere(m), potential, grad, "bvmf", start, {"A": A, "b": b})


def random_bvmf_parameters(m: int, rng: np.random.Generator):
    """Positive definite A = X^T X / m (X standard normal) and standard normal b."""
    X = rng.standard_normal((m, m))
    A = X.T @ X / m
    b = rng.standard_normal(m)
    return A, b


def sphere_uniform_target(m: int) -> TargetDensity:
    return TargetDensity(Sphere(m), lambda q: 0.0, lambda q: np.zeros_like(q), "sphere_uniform")


def circle_target(kappa: float = 1.0, bingham: float = 0.5, angle: float = 0.3) -> TargetDensity:
    """Von Mises-like density on S^1: exp(kappa cos(t - angle) + bingham sin(t)^2)."""
    b = kappa * np.array([np.cos(angle), np.sin(angle)])
    A = np.diag([0.0, bingham])
    target = bvmf_target(A, b)
    return TargetDensity(target.manifold, target.potential, target.grad_potential,
                         "circle", np.array([1.0, 0.0]),
                         {"kappa": kappa, "bingham": bingham, "angle": angle})


def circle_log_density(theta, kappa: float = 1.0, bingham: float = 0.5, angle: float = 0.3):
    """Unnormalized log density of :func:`circle_target` in the angle variable."""
    return kappa * np.cos(theta - angle) + bingham * np.sin(theta) ** 2


# -- simplex embedded in the sphere ------------------------------------------

@dataclass(frozen=True)
class Game:
    team_a: tuple
    team_b: tuple
    winner_a: bool


def simplex_sphere_target(alpha, games=()) -> TargetDensity:
    """Dirichlet(alpha) prior with team-contest likelihood, on q = sqrt(theta).

    theta ~ Dirichlet(alpha) pushes forward to the density prod |q_i|^(2 alpha_i - 1)
    with respect to surface measure on the sphere. A game between teams T1, T2
    is won by T1 with probability sum_{T1} theta / sum_{T1 u T2} theta.
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha <= 0):
        raise NonPositiveAlpha(f"Dirichlet parameters must be positive, got {alpha}")
    n = alpha.shape[0]
    expo = 2.0 * alpha - 1.0
    games = [g if isinstance(g, Game) else Game(tuple(g[0]), tuple(g[1]), bool(g[2])) for g in games]
    win = np.zeros((len(games), n))
    both = np.zeros((len(games), n))
    for row, g in enumerate(games):
        if set(g.team_a) & set(g.team_b):
            raise ValueError(f"teams overlap in game {row}: {g}")
        winners = g.team_a if g.winner_a else g.team_b
        win[row, list(winners)] = 1.0
        both[row, list(g.team_a) + list(g.team_b)] = 1.0

    def potential(q):
        with np.errstate(divide="ignore"):
            u = -float(expo @ np.log(np.abs(q)))
        if games:
            sq = q * q
            u -= float(np.sum(np.log(win @ sq) - np.log(both @ sq)))
        return u

    def grad(q):
        with np.errstate(divide="ignore"):
            g = -expo / q
        if games:
            sq = q * q
            g = g - 2.0 * q * (win.T @ (1.0 / (win @ sq))) + 2.0 * q * (both.T @ (1.0 / (both @ sq)))
        return g

    start = np.sqrt(alpha / alpha.sum())
    return TargetDensity(Sphere(n), potential, grad, "simplex", start,
                         {"alpha": alpha, "games": games})


def dirichlet_sphere_log_density(q, alpha) -> float:
    """Normalized log density on the positive orthant of the sphere of the
    pushforward of Dirichlet(alpha) under theta -> sqrt(theta)."""
    alpha = np.asarray(alpha, dtype=float)
    n = alpha.shape[0]
    log_norm = gammaln(alpha.sum()) - gammaln(alpha).sum() + (n - 1) * np.log(2.0)
    return float(log_norm + (2.0 * alpha - 1.0) @ np.log(np.abs(q)))


def sphere_to_simplex(samples: np.ndarray) -> np.ndarray:
    return np.asarray(samples) ** 2


def read_games_csv(path) -> list:
    """Read games from a CSV with columns teamA, teamB, winnerA.

    Teams are semicolon-separated zero-based indices; winnerA is 0 or 1.
    """
    games = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            a = tuple(int(x) for x in row["teamA"].split(";") if x.strip())
            b = tuple(int(x) for x in row["teamB"].split(";") if x.strip())
            winner = row["winnerA"].strip()
            if winner not in ("0", "1"):
                raise ValueError(f"winnerA must be 0 or 1, got {winner!r}")
            games.append(Game(a, b, winner == "1"))
    return games


def synthetic_games(n: int, num_games: int, rng: np.random.Generator, team_size: int = 2):
    """Random contests between disjoint teams with outcomes drawn from the model."""
    theta = rng.dirichlet(np.full(n, 2.0))
    games = []
    for _ in range(num_games):
        idx = rng.permutation(n)[: 2 * team_size]
        a, b = tuple(int(i) for i in idx[:team_size]), tuple(int(i) for i in idx[team_size:])
        pa = theta[list(a)].sum() / theta[list(a + b)].sum()
        games.append(Game(a, b, bool(rng.uniform() < pa)))
    return games


# -- network eigenmodel ------------------------------------------------------

def _log_probit_ratio(x):
    # log(phi(x) / Phi(x)), stable in both tails
    return -0.5 * x * x - 0.5 * np.log(2.0 * np.pi) - log_ndtr(x)


def network_eigenmodel_target(
    adjacency, rank: int = 3, prior_var_sigma: float = 230.0, prior_var_c: float = 100.0,
    likelihood_weight: float = 1.0,
) -> TargetDensity:
    """Posterior of delta_ij ~ Bernoulli(Phi((U S U^T)_ij + c)), i < j.

    Parameters are packed as q = [vec(U) (column-major), sigma_1..sigma_r, c] on
    Stiefel(n, r) x R^(r+1). Priors: sigma_i ~ Normal(0, prior_var_sigma),
    c ~ Normal(0, prior_var_c) (both variances), U uniform.
    """
    D = np.asarray(adjacency, dtype=float)
    n = D.shape[0]
    if D.shape != (n, n) or not np.array_equal(D, D.T):
        raise ValueError("adjacency must be a symmetric square matrix")
    if np.any(np.diag(D) != 0) or not np.all((D == 0) | (D == 1)):
        raise ValueError("adjacency must be 0/1 with zero diagonal")
    r = int(rank)
    stiefel = Stiefel(n, r)
    manifold = ProductManifold([stiefel, r + 1])
    iu = np.triu_indices(n, 1)
    off = ~np.eye(n, dtype=bool)
    w = float(likelihood_weight)

    def unpack(q):
        U = stiefel.as_matrix(q[: n * r])
        return U, q[n * r: n * r + r], q[-1]

    def potential(q):
        U, s, c = unpack(q)
        eta = ((U * s) @ U.T + c)[iu]
        d = D[iu]
        loglik = np.sum(d * log_ndtr(eta) + (1.0 - d) * log_ndtr(-eta))
        return -w * float(loglik) + float(s @ s) / (2 * prior_var_sigma) + c * c / (2 * prior_var_c)

    def grad(q):
        U, s, c = unpack(q)
        eta = (U * s) @ U.T + c
        # dU/deta for each pair, symmetric with zero diagonal
        W = -w * (D * np.exp(_log_probit_ratio(eta)) - (1.0 - D) * np.exp(_log_probit_ratio(-eta)))
        W = np.where(off, W, 0.0)
        gU = (W @ U) * s
        gs = 0.5 * np.einsum("ik,ij,jk->k", U, W, U) + s / prior_var_sigma
        gc = 0.5 * W.sum() + c / prior_var_c
        return np.concatenate([stiefel.flatten(gU), gs, [gc]])

    evals, evecs = np.linalg.eigh(D)
    top = np.argsort(-np.abs(evals))[:r]
    start = np.concatenate([stiefel.flatten(evecs[:, top]), evals[top], [0.0]])
    return TargetDensity(manifold, potential, grad, "network", start,
                         {"n": n, "rank": r, "unpack": unpack})


def synthetic_network(n: int, rank: int, rng: np.random.Generator, scale: float = 3.0, c: float = -0.5):
    """Draw an adjacency matrix from the eigenmodel itself."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, rank)))
    s = scale * rng.standard_normal(rank)
    eta = (Q * s) @ Q.T + c
    prob = np.exp(log_ndtr(eta))
    upper = np.triu(rng.uniform(size=(n, n)) < prob, 1).astype(float)
    return upper + upper.T


def read_adjacency(path) -> np.ndarray:
    """Whitespace-separated 0/1 matrix, one row per line."""
    return np.atleast_2d(np.loadtxt(path, dtype=float))


# -- Euclidean baseline ------------------------------------------------------

def quadratic_target(precision) -> TargetDensity:
    """Zero-mean Gaussian on R^m with the given precision matrix."""
    P = np.atleast_2d(np.asarray(precision, dtype=float))
    m = P.shape[0]
    return TargetDensity(Euclidean(m), lambda q: 0.5 * float(q @ P @ q), lambda q: P @ q,
                         "quadratic", np.zeros(m))
