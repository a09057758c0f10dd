"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np
from scipy.optimize import root
from scipy.stats import dirichlet

from magmcmc.targets import circle_log_density


def fd_gradient(f, q, h=1e-6):
    return np.array([(f(q + h * e) - f(q - h * e)) / (2 * h) for e in np.eye(q.size)])


def _cell_nodes(n_cells, sub, lo=0.0, hi=np.pi / 2):
    """Gauss-Legendre nodes inside each of n_cells equal cells; returns (nodes, weights) of shape (n_cells, sub)."""
    x, w = np.polynomial.legendre.leggauss(sub)
    edges = np.linspace(lo, hi, n_cells + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    return mid[:, None] + half[:, None] * x[None, :], half[:, None] * w[None, :]


def simplex_octant_cell_masses(potential, alpha, n_cells=120, sub=4, h=1e-6):
    """Cell probabilities on the positive octant of S^2 from two routes.

    Cells are a regular grid in (a, b) with q = (sin a cos b, sin a sin b, cos a).
    ``model`` normalizes exp(-potential) against surface measure sin(a) da db by
    quadrature. ``oracle`` integrates the Dirichlet(alpha) density of
    theta = q^2 times a finite-difference Jacobian of (a, b) -> (theta_1, theta_2).
    """
    an, aw = _cell_nodes(n_cells, sub)
    bn, bw = _cell_nodes(n_cells, sub)
    A = an.reshape(-1)[:, None]
    B = bn.reshape(-1)[None, :]
    W = aw.reshape(-1)[:, None] * bw.reshape(-1)[None, :]

    def theta(a, b):
        return (np.sin(a) * np.cos(b)) ** 2, (np.sin(a) * np.sin(b)) ** 2

    sa, ca, sb, cb = np.sin(A), np.cos(A), np.sin(B), np.cos(B)
    Q = np.stack(np.broadcast_arrays(sa * cb, sa * sb, ca), axis=-1)
    U = np.apply_along_axis(potential, -1, Q)
    dens_model = np.exp(-(U - U.min())) * sa

    t1a = (theta(A + h, B)[0] - theta(A - h, B)[0]) / (2 * h)
    t2a = (theta(A + h, B)[1] - theta(A - h, B)[1]) / (2 * h)
    t1b = (theta(A, B + h)[0] - theta(A, B - h)[0]) / (2 * h)
    t2b = (theta(A, B + h)[1] - theta(A, B - h)[1]) / (2 * h)
    jac = np.abs(t1a * t2b - t1b * t2a)
    t1, t2 = theta(A, B)
    t1, t2 = np.broadcast_arrays(t1, t2)
    th = np.stack([t1.ravel(), t2.ravel(), np.clip(1.0 - t1 - t2, 1e-300, None).ravel()])
    th = np.clip(th, 1e-300, None)
    th = th / th.sum(axis=0)
    dens_oracle = dirichlet.pdf(th, alpha).reshape(t1.shape) * jac

    def cells(d):
        m = (W * d).reshape(n_cells, sub, n_cells, sub).sum(axis=(1, 3))
        return m.ravel()

    model = cells(dens_model)
    return model / model.sum(), cells(dens_oracle)


def circle_bin_probabilities(bins=64, kappa=1.0, bingham=0.5, angle=0.3, sub=16):
    """Probability of each of ``bins`` equal angle bins on (-pi, pi] under the circle target."""
    an, aw = _cell_nodes(bins, sub, -np.pi, np.pi)
    d = np.exp(circle_log_density(an, kappa, bingham, angle))
    mass = (aw * d).sum(axis=1)
    return mass / mass.sum()


def angle_histogram(samples, bins=64):
    theta = np.arctan2(samples[:, 1], samples[:, 0])
    counts, _ = np.histogram(theta, np.linspace(-np.pi, np.pi, bins + 1))
    return counts / counts.sum()


def total_variation(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


# -- canonical RATTLE with its own multiplier solvers -------------------------

def rattle_step(q, p, manifold, grad, eps, solve_lambda):
    """Textbook RATTLE with its own multiplier solvers."""
    G = manifold.jacobian(q)
    a = q + eps * (p - 0.5 * eps * grad(q))
    d = -0.5 * eps * eps * G.T
    lam = solve_lambda(a, d)
    p_half = p - 0.5 * eps * (grad(q) + G.T @ lam)
    q1 = q + eps * p_half
    G1 = manifold.jacobian(q1)
    w = p_half - 0.5 * eps * grad(q1)
    nu = np.linalg.lstsq(G1 @ G1.T, G1 @ w, rcond=None)[0]
    return q1, w - G1.T @ nu


def sphere_lambda(a, d):
    d = d[:, 0]
    # |a + l d|^2 = 1, smallest root in magnitude
    roots = np.roots([d @ d, 2 * (a @ d), a @ a - 1.0])
    roots = roots[np.isreal(roots)].real
    return np.array([roots[np.argmin(np.abs(roots))]])


def generic_lambda(manifold):
    def solve(a, d):
        sol = root(lambda l: manifold.constraint(a + d @ l), np.zeros(d.shape[1]), method="hybr",
                   options={"xtol": 1e-15})
        return sol.x
    return solve


def affine_lambda(manifold):
    def solve(a, d):
        return np.linalg.solve(manifold.A @ d, manifold.b - manifold.A @ a)
    return solve
