"""Manifold HMC transitions and chain drivers.

Samplers:
  magnetic   constrained magnetic integrator, field from the config
  canonical  same integrator with L = 0
  mala       canonical with a single integration step
  rwm        single step, L = 0, potential force switched off during
             integration; the Metropolis test still uses the full H
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from magmcmc.errors import InitializationInfeasible, NumericalFailure
from magmcmc.integrator import IntegratorParams, integrate_arrays
from magmcmc.magnetic import MagneticField, PhaseState
from magmcmc.manifolds import sample_momentum
from magmcmc.targets import TargetDensity

SAMPLERS = ("magnetic", "canonical", "mala", "rwm")
INIT_TOL = 1e-8


def _zero_grad(q):
    return np.zeros_like(q)


@dataclass
class ChainConfig:
    target: TargetDensity
    field: Optional[MagneticField] = None
    step_size: float = 0.01
    num_steps: int = 10
    num_samples: int = 1000
    burn_in: Optional[int] = None
    seed: int = 0
    sampler: str = "magnetic"
    interleave_canonical: bool = False
    strict_reversibility: bool = False
    reversibility_tol: float = 1e-6
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    initial_point: Optional[np.ndarray] = None
    # record every thin-th transition after burn-in
    thin: int = 1

    def __post_init__(self):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"unknown sampler {self.sampler!r}; expected one of {SAMPLERS}")
        if not self.step_size > 0:
            raise ValueError("base step size must be positive")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.burn_in is None:
            self.burn_in = self.num_samples // 10
        m = self.target.dim
        if self.field is None or self.sampler != "magnetic":
            self.field = MagneticField.zero(m)
        if self.field.dim != m:
            raise ValueError(f"field has dim {self.field.dim}, target has dim {m}")

    @property
    def effective_steps(self) -> int:
        return 1 if self.sampler in ("mala", "rwm") else self.num_steps

    def integrator_params(self, eps: float, num_steps: Optional[int] = None) -> IntegratorParams:
        return IntegratorParams(eps, num_steps or self.effective_steps, self.newton_tol, self.newton_max_iter)


@dataclass
class ChainOutput:
    samples: np.ndarray
    accept_flags: np.ndarray
    hamiltonian_values: np.ndarray
    wall_time_seconds: float
    newton_failure_count: int
    field_matrix: np.ndarray = field(repr=False, default=None)

    @property
    def acceptance_rate(self) -> float:
        return float(np.mean(self.accept_flags))


@dataclass
class _Kernel:
    """What one transition integrates: manifold, force, field, step count."""

    target: TargetDensity
    grad: object
    fact: object
    num_steps: int
    _cache: dict = field(default_factory=dict, repr=False)

    def kinetic(self, eps: float):
        # only +-eps ever occur within a chain
        if eps not in self._cache:
            self._cache[eps] = self.fact.kinetic_matrices(eps)
        return self._cache[eps]

    def params(self, cfg: "ChainConfig", eps: float) -> IntegratorParams:
        key = ("params", eps)
        if key not in self._cache:
            self._cache[key] = cfg.integrator_params(eps, self.num_steps)
        return self._cache[key]


def _kernel(cfg: ChainConfig, canonical_single_step: bool = False) -> _Kernel:
    t = cfg.target
    if canonical_single_step:
        return _Kernel(t, t.grad_potential, MagneticField.zero(t.dim).factorization, 1)
    grad = _zero_grad if cfg.sampler == "rwm" else t.grad_potential
    return _Kernel(t, grad, cfg.field.factorization, cfg.effective_steps)


def _transition(q, p, cfg: ChainConfig, kernel: _Kernel, rng: np.random.Generator):
    """Returns (q, p, accepted, delta_h, newton_failed). Consumes exactly two
    draws from ``rng``: the step-size sign and the acceptance uniform."""
    t = kernel.target
    eps = cfg.step_size if rng.integers(2) else -cfg.step_size
    params = kernel.params(cfg, eps)
    failed = False
    try:
        q1, p1, _, _ = integrate_arrays(q, p, t.manifold, kernel.grad, kernel.fact, params,
                                        kinetic=kernel.kinetic(eps))
        delta_h = t.hamiltonian(q1, p1) - t.hamiltonian(q, p)
    except NumericalFailure:
        failed, delta_h = True, math.inf
    u = rng.uniform()
    if failed or not np.isfinite(delta_h) or not math.log(u) < -delta_h:
        return q, p, False, delta_h, failed
    if cfg.strict_reversibility:
        try:
            qb, pb, _, _ = integrate_arrays(q1, p1, t.manifold, kernel.grad, kernel.fact, params.reversed(),
                                            kinetic=kernel.kinetic(-eps))
            err = max(np.max(np.abs(qb - q)), np.max(np.abs(pb - p)))
        except NumericalFailure:
            err = math.inf
        if not err <= cfg.reversibility_tol:
            return q, p, False, delta_h, False
    return q1, p1, True, delta_h, False


def hmc_transition(state: PhaseState, cfg: ChainConfig, rng: np.random.Generator):
    """One Metropolis-corrected transition with a random step-size sign.

    Returns ``(state, accepted, delta_h)`` with delta_h = H(proposal) - H(state);
    a Newton failure is a rejection with delta_h = inf.
    """
    q, p, acc, dh, _ = _transition(state.q, state.p, cfg, _kernel(cfg), rng)
    return (PhaseState(q, p) if acc else state), acc, dh


def mala_transition(state: PhaseState, cfg: ChainConfig, rng: np.random.Generator):
    if cfg.sampler != "mala":
        cfg = _with_sampler(cfg, "mala")
    s, acc, _ = hmc_transition(state, cfg, rng)
    return s, acc


def rwm_transition(state: PhaseState, cfg: ChainConfig, rng: np.random.Generator):
    if cfg.sampler != "rwm":
        cfg = _with_sampler(cfg, "rwm")
    s, acc, _ = hmc_transition(state, cfg, rng)
    return s, acc


def _with_sampler(cfg: ChainConfig, sampler: str) -> ChainConfig:
    return replace(cfg, sampler=sampler, field=None)


def initial_state_point(cfg: ChainConfig) -> np.ndarray:
    t = cfg.target
    q = np.array(cfg.initial_point if cfg.initial_point is not None else t.start(), dtype=float)
    if q.shape != (t.dim,):
        raise InitializationInfeasible(f"initial point has shape {q.shape}, expected ({t.dim},)")
    res = t.manifold.residual(q)
    if not res <= INIT_TOL:
        raise InitializationInfeasible(f"initial point violates constraints by {res:.3e}")
    t.manifold.check_initial_point(q)
    return q


def run_chain(cfg: ChainConfig) -> ChainOutput:
    """Burn-in plus ``num_samples * thin`` transitions, momentum resampled
    before each; every ``thin``-th one after burn-in is recorded. With
    ``interleave_canonical`` a single-step L = 0 transition is inserted after
    each magnetic one (not recorded). Accept flags are per recorded transition."""
    rng = np.random.default_rng(cfg.seed)
    t = cfg.target
    q = initial_state_point(cfg)
    kernel = _kernel(cfg)
    interleave = _kernel(cfg, canonical_single_step=True) if cfg.interleave_canonical else None

    n, m = cfg.num_samples, t.dim
    samples = np.empty((n, m))
    flags = np.zeros(n, dtype=bool)
    energies = np.empty(n)
    failures = 0

    start = time.perf_counter()
    for i in range(cfg.burn_in + n * cfg.thin):
        p = sample_momentum(t.manifold, q, rng)
        q, p, acc, _, failed = _transition(q, p, cfg, kernel, rng)
        failures += failed
        k = i - cfg.burn_in
        if k >= 0 and (k + 1) % cfg.thin == 0:
            j = k // cfg.thin
            samples[j] = q
            flags[j] = acc
            energies[j] = t.hamiltonian(q, p)
        if interleave is not None:
            p = sample_momentum(t.manifold, q, rng)
            q, p, _, _, failed = _transition(q, p, cfg, interleave, rng)
            failures += failed
    elapsed = time.perf_counter() - start
    return ChainOutput(samples, flags, energies, elapsed, failures, np.array(cfg.field.matrix))


def derive_seeds(master_seed: int, count: int) -> list:
    """Independent integer seeds for ``count`` chains from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


def random_fields(dim: int, count: int, master_seed: int, scale: float = 1.0) -> list:
    """``count`` skew fields, each drawn from its own seed derived from ``master_seed``."""
    return [
        MagneticField.random(dim, np.random.default_rng(s), scale)
        for s in derive_seeds(master_seed + 1_000_003, count)
    ]
