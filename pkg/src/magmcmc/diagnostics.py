"""Effective sample size and structural checks on integrators.

ESS uses Geyer's initial monotone sequence estimator: autocorrelations are
summed in adjacent pairs until the first non-positive pair, with the pair sums
forced to be non-increasing. Negatively correlated chains can have ESS > n,
which is allowed up to the truncation ceiling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from magmcmc.errors import DegenerateSeries, NumericalFailure
from magmcmc.integrator import IntegratorParams, integrate_arrays
from magmcmc.magnetic import MagneticField, magnetic_structure_matrix
from magmcmc.manifolds import Euclidean, SpecialOrthogonal, Stiefel, newton_retract, sample_momentum
from magmcmc.targets import (
    DEFAULT_AFFINE_A,
    DEFAULT_AFFINE_B,
    TargetDensity,
    bvmf_target,
    gaussian_affine_target,
    quadratic_target,
    random_bvmf_parameters,
)

MIN_SERIES_LENGTH = 10
ESS_FLOOR = 1e-12
CONSTANT_RTOL = 1e-10


# -- effective sample size ---------------------------------------------------

def autocorrelation(x) -> np.ndarray:
    """Biased empirical autocorrelation at lags 0..n-1, via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    d = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    return acov / acov[0]


def _monotone_tau(rho: np.ndarray) -> float:
    n = rho.shape[0]
    k = n // 2
    gamma = rho[: 2 * k : 2] + rho[1 : 2 * k : 2]
    nonpos = np.flatnonzero(gamma <= 0)
    if nonpos.size:
        gamma = gamma[: nonpos[0]]
    gamma = np.minimum.accumulate(gamma)
    return -1.0 + 2.0 * float(gamma.sum())


def effective_sample_size(series, ceiling: float = 10_000) -> float:
    """n / tau with tau = 1 + 2 sum rho_t, truncated by the initial monotone
    sequence rule and clamped to [ESS_FLOOR, ceiling]."""
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < MIN_SERIES_LENGTH:
        raise DegenerateSeries(f"series has length {n}, need at least {MIN_SERIES_LENGTH}")
    if not np.all(np.isfinite(x)):
        raise DegenerateSeries("series contains non-finite values")
    if np.var(x) == 0.0:
        raise DegenerateSeries("series has zero variance")
    tau = _monotone_tau(autocorrelation(x))
    if tau <= 0:
        return float(ceiling)
    return float(min(max(n / tau, ESS_FLOOR), ceiling))


@dataclass
class EssReport:
    per_coordinate: np.ndarray
    min_ess: float
    mean_ess: float
    min_ess_per_second: Optional[float]
    mean_ess_per_second: Optional[float]
    truncation_ceiling: float

    def to_dict(self) -> dict:
        return {
            "per_coordinate": [float(v) for v in self.per_coordinate],
            "min_ess": self.min_ess,
            "mean_ess": self.mean_ess,
            "min_ess_per_second": self.min_ess_per_second,
            "mean_ess_per_second": self.mean_ess_per_second,
            "truncation_ceiling": self.truncation_ceiling,
        }


def ess_report(samples, ceiling: float = 10_000, wall_time: Optional[float] = None) -> EssReport:
    """Per-coordinate ESS of an (n, m) sample matrix.

    Coordinates that are constant up to round-off (e.g. pinned by a linear
    constraint) are skipped.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if X.shape[0] < MIN_SERIES_LENGTH:
        raise DegenerateSeries(f"need at least {MIN_SERIES_LENGTH} rows, got {X.shape[0]}")
    if not np.all(np.isfinite(X)):
        raise DegenerateSeries("samples contain non-finite values")
    pinned = CONSTANT_RTOL * max(1.0, float(np.max(np.abs(X))))
    values = []
    for j in range(X.shape[1]):
        if np.ptp(X[:, j]) <= pinned:
            continue
        values.append(effective_sample_size(X[:, j], ceiling))
    if not values:
        raise DegenerateSeries("every coordinate is constant")
    ess = np.array(values)
    lo, avg = float(ess.min()), float(ess.mean())
    per_sec = wall_time is not None and wall_time > 0
    return EssReport(ess, lo, avg, lo / wall_time if per_sec else None,
                     avg / wall_time if per_sec else None, ceiling)


# -- structural checks -------------------------------------------------------

@dataclass
class CheckReport:
    check_name: str
    max_residual: float
    threshold: float
    passed: bool = field(init=False)
    details: str = ""

    def __post_init__(self):
        self.passed = bool(self.max_residual <= self.threshold)

    def line(self) -> str:
        return f"{self.check_name} {self.max_residual:.6e} {self.threshold:.6e} {'PASS' if self.passed else 'FAIL'}"


def format_reports(reports) -> str:
    return "\n".join(r.line() for r in reports) + "\n"


@dataclass
class Subject:
    """An integrator under test.

    ``step(q, p, eps, num_steps)`` maps a state forward; ``draw(rng)`` returns a
    random feasible (q, p); ``field`` is the skew matrix defining the 2-form.
    """

    name: str
    step: Callable
    draw: Callable
    hamiltonian: Callable
    field: np.ndarray
    manifold: object = None


def constrained_subject(name: str, target: TargetDensity, field: MagneticField,
                        newton_tol: float = 1e-13) -> Subject:
    man = target.manifold
    fact = field.factorization

    def step(q, p, eps, num_steps=1):
        params = IntegratorParams(eps, num_steps, newton_tol=newton_tol)
        q1, p1, _, _ = integrate_arrays(q, p, man, target.grad_potential, fact, params)
        return q1, p1

    def draw(rng):
        q = target.start()
        # wander a little so cases differ, staying on the manifold
        q = newton_retract(man, q + 0.1 * man.project(q, rng.standard_normal(man.ambient_dim)))
        return q, sample_momentum(man, q, rng)

    return Subject(name, step, draw, target.hamiltonian, field.matrix, man)


def _residual_feasibility(man, q, p):
    g = man.constraint(q)
    Gp = man.jacobian(q) @ p
    a = float(np.max(np.abs(g))) if g.size else 0.0
    b = float(np.max(np.abs(Gp))) if Gp.size else 0.0
    return max(a, b)


def check_reversibility(subject: Subject, cases: int = 20, num_steps: int = 10, seed: int = 0,
                        threshold: float = 1e-8, eps_range=(1e-3, 1e-1)) -> CheckReport:
    """Forward N steps with eps, back N steps with -eps; worst sup-norm error."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(cases):
        q, p = subject.draw(rng)
        eps = rng.uniform(*eps_range)
        try:
            q1, p1 = subject.step(q, p, eps, num_steps)
            q2, p2 = subject.step(q1, p1, -eps, num_steps)
            err = max(np.max(np.abs(q2 - q)), np.max(np.abs(p2 - p)))
        except NumericalFailure:
            err = math.inf
        worst = max(worst, float(err))
    return CheckReport(f"{subject.name}.reversibility", worst, threshold,
                       f"{cases} cases, N={num_steps}, eps in {eps_range}")


def euclidean_symplectic_residual(step, q, p, eps, L, h=1e-5) -> float:
    """|| J^T Jmag J - Jmag ||_max for the central-difference Jacobian J of one step."""
    z = np.concatenate([q, p])
    m = q.shape[0]
    J = np.empty((2 * m, 2 * m))
    for j in range(2 * m):
        e = np.zeros(2 * m)
        e[j] = h
        zp, zm = z + e, z - e
        fp = np.concatenate(step(zp[:m], zp[m:], eps, 1))
        fm = np.concatenate(step(zm[:m], zm[m:], eps, 1))
        J[:, j] = (fp - fm) / (2 * h)
    Jmag = magnetic_structure_matrix(L)
    return float(np.max(np.abs(J.T @ Jmag @ J - Jmag)))


def tangent_curve(man, q, p, dq, dp):
    """Curve s -> (q(s), p(s)) on the cotangent bundle through (q, p)."""

    def at(s):
        qs = newton_retract(man, q + s * dq)
        ps = man.project(qs, p + s * dp)
        return qs, ps

    return at


def manifold_two_form_residual(step, man, q, p, eps, L, rng, pairs: int = 3, h=1e-5) -> float:
    """Compare u^T Jmag v before and after one step for tangent pairs (u, v).

    Tangent vectors are central differences of curves on the cotangent bundle;
    their images are central differences of the stepped curves.
    """
    Jmag = magnetic_structure_matrix(L)
    m = q.shape[0]

    def push(curve):
        qa, pa = curve(h)
        qb, pb = curve(-h)
        u0 = np.concatenate([qa - qb, pa - pb]) / (2 * h)
        fa = np.concatenate(step(qa, pa, eps, 1))
        fb = np.concatenate(step(qb, pb, eps, 1))
        return u0, (fa - fb) / (2 * h)

    worst = 0.0
    for _ in range(pairs):
        cu = tangent_curve(man, q, p, rng.standard_normal(m), rng.standard_normal(m))
        cv = tangent_curve(man, q, p, rng.standard_normal(m), rng.standard_normal(m))
        u0, u1 = push(cu)
        v0, v1 = push(cv)
        worst = max(worst, abs(u1 @ Jmag @ v1 - u0 @ Jmag @ v0))
    return float(worst)


def check_symplectic(subject: Subject, cases: int = 5, seed: int = 0, eps: float = 0.05,
                     threshold: Optional[float] = None) -> CheckReport:
    """Finite-difference symplecticness of one step.

    Unconstrained subjects use the full Jacobian (default threshold 1e-6);
    constrained ones use the 2-form on tangent pairs (default 1e-5).
    """
    rng = np.random.default_rng(seed)
    constrained = subject.manifold is not None and subject.manifold.constraint_dim > 0
    if threshold is None:
        threshold = 1e-5 if constrained else 1e-6
    worst = 0.0
    for _ in range(cases):
        q, p = subject.draw(rng)
        try:
            if constrained:
                r = manifold_two_form_residual(subject.step, subject.manifold, q, p, eps, subject.field, rng)
            else:
                r = euclidean_symplectic_residual(subject.step, q, p, eps, subject.field)
        except NumericalFailure:
            r = math.inf
        worst = max(worst, r)
    kind = "2-form on tangent pairs" if constrained else "full Jacobian"
    return CheckReport(f"{subject.name}.symplectic", worst, threshold, f"{cases} cases, {kind}, eps={eps}")


ORDER_LADDER = (0.2, 0.1, 0.05, 0.025, 0.0125)


def energy_error_slope(subject: Subject, q, p, ladder=ORDER_LADDER, horizon: float = 1.0):
    """Max |H - H0| over a fixed time horizon for each eps; returns (slope, errors)."""
    h0 = subject.hamiltonian(q, p)
    errors = []
    for eps in ladder:
        n = int(round(horizon / eps))
        qi, pi = q, p
        worst = 0.0
        for _ in range(n):
            qi, pi = subject.step(qi, pi, eps, 1)
            worst = max(worst, abs(subject.hamiltonian(qi, pi) - h0))
        errors.append(worst)
    errors = np.array(errors)
    slope = np.polyfit(np.log(ladder), np.log(errors), 1)[0]
    return float(slope), errors


def check_order(subject: Subject, seed: int = 0, ladder=ORDER_LADDER, horizon: float = 1.0,
                slope_range=(1.8, 2.2)) -> CheckReport:
    """Global energy error must scale like eps^2. The residual reported is the
    distance of the fitted log-log slope from the centre of ``slope_range``."""
    rng = np.random.default_rng(seed)
    q, p = subject.draw(rng)
    try:
        slope, errors = energy_error_slope(subject, q, p, ladder, horizon)
    except NumericalFailure:
        slope, errors = math.nan, []
    centre = 0.5 * (slope_range[0] + slope_range[1])
    half = 0.5 * (slope_range[1] - slope_range[0])
    resid = abs(slope - centre) if np.isfinite(slope) else math.inf
    return CheckReport(f"{subject.name}.order", resid, half,
                       f"slope={slope:.4f} errors={np.array2string(np.asarray(errors), precision=3)}")


def check_feasibility(subject: Subject, num_steps: int = 1000, eps: float = 0.01, seed: int = 0,
                      threshold: float = 1e-8) -> CheckReport:
    """Worst constraint and momentum-constraint residual along one long trajectory."""
    rng = np.random.default_rng(seed)
    q, p = subject.draw(rng)
    man = subject.manifold
    worst = 0.0
    if man is not None:
        try:
            for _ in range(num_steps):
                q, p = subject.step(q, p, eps, 1)
                worst = max(worst, _residual_feasibility(man, q, p))
        except NumericalFailure:
            worst = math.inf
    return CheckReport(f"{subject.name}.feasibility", worst, threshold, f"N={num_steps}, eps={eps}")


# -- check batteries ---------------------------------------------------------

DEFAULT_THRESHOLDS = {
    "reversibility": 1e-8,
    "symplectic_euclidean": 1e-6,
    "symplectic_manifold": 1e-5,
    "order_slope_min": 1.8,
    "order_slope_max": 2.2,
    "feasibility": 1e-8,
}

SUITES = ("core", "constrained", "all")


def _anharmonic_target(m: int):
    def U(q):
        return 0.5 * float(q @ q) + 0.25 * float(np.sum(q ** 4))

    def grad(q):
        return q + q ** 3

    return TargetDensity(Euclidean(m), U, grad, "anharmonic", np.zeros(m))


def _linear_potential_target(manifold, rng, name):
    c = rng.standard_normal(manifold.ambient_dim)
    return TargetDensity(manifold, lambda q: -float(c @ q), lambda q: -c, name)


def core_subjects(seed: int = 0):
    rng = np.random.default_rng(seed)
    subjects = []
    quad = quadratic_target(np.diag([1.0, 4.0]))
    subjects.append(constrained_subject("leapfrog_r2", quad, MagneticField.zero(2)))
    anh = _anharmonic_target(3)
    subjects.append(constrained_subject("magnetic_r3", anh, MagneticField.random(3, rng)))
    return subjects


def constrained_subjects(seed: int = 0):
    """(subject, include_order) pairs over the manifold catalog."""
    rng = np.random.default_rng(seed)
    out = []
    bvmf = bvmf_target(*random_bvmf_parameters(6, rng))
    out.append((constrained_subject("sphere_bvmf", bvmf, MagneticField.random(6, rng)), True))
    aff = gaussian_affine_target(np.zeros(4), np.ones(4), DEFAULT_AFFINE_A, DEFAULT_AFFINE_B)
    out.append((constrained_subject("affine_gaussian", aff, MagneticField.random(4, rng)), True))
    st = _linear_potential_target(Stiefel(4, 2), rng, "stiefel")
    out.append((constrained_subject("stiefel_4_2", st, MagneticField.random(8, rng)), False))
    so = _linear_potential_target(SpecialOrthogonal(3), rng, "so3")
    out.append((constrained_subject("so3", so, MagneticField.random(9, rng)), False))
    return out


def _battery(subject, include_order, th, seed):
    reports = [
        check_reversibility(subject, seed=seed, threshold=th["reversibility"]),
        check_symplectic(subject, seed=seed, threshold=th[
            "symplectic_manifold" if subject.manifold.constraint_dim else "symplectic_euclidean"]),
        check_feasibility(subject, seed=seed, threshold=th["feasibility"]),
    ]
    if include_order:
        reports.append(check_order(subject, seed=seed,
                                   slope_range=(th["order_slope_min"], th["order_slope_max"])))
    return reports


def run_check_suite(suite: str, seed: int = 0, thresholds: Optional[dict] = None) -> list:
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    th = dict(DEFAULT_THRESHOLDS)
    if thresholds:
        unknown = set(thresholds) - set(th)
        if unknown:
            raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
        th.update(thresholds)
    reports = []
    if suite in ("core", "all"):
        for s in core_subjects(seed):
            reports += _battery(s, True, th, seed)
    if suite in ("constrained", "all"):
        for s, order in constrained_subjects(seed):
            reports += _battery(s, order, th, seed)
    return reports
