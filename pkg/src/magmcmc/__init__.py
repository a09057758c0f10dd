"""Magnetic manifold Hamiltonian Monte Carlo."""

from magmcmc.integrator import IntegratorParams, constrained_step, integrate
from magmcmc.magnetic import MagneticField, PhaseState, euclidean_magnetic_step, factorize
from magmcmc.samplers import ChainConfig, run_chain

__version__ = "0.1.0"

__all__ = [
    "ChainConfig",
    "IntegratorParams",
    "MagneticField",
    "PhaseState",
    "constrained_step",
    "euclidean_magnetic_step",
    "factorize",
    "integrate",
    "run_chain",
]
