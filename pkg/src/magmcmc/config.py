"""Experiment configuration: a JSON document with a versioned schema.

Example::

    {
      "schema_version": 1,
      "target": "gaussian_affine",
      "target_params": {},
      "sampler": "magnetic",
      "step_size": 0.01,
      "num_steps": 10,
      "num_samples": 10000,
      "seed": 0,
      "output_dir": "runs/affine"
    }

``step_size`` and ``num_steps`` may be lists when the CLI is run with
``--grid``; every combination becomes its own run directory.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from magmcmc import targets
from magmcmc.samplers import SAMPLERS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


# allowed target_params per family, with defaults
TARGET_PARAMS = {
    "gaussian_affine": {
        "mu": targets.DEFAULT_AFFINE_MU.tolist(),
        "sigma_diag": targets.DEFAULT_AFFINE_SIGMA.tolist(),
        "A": targets.DEFAULT_AFFINE_A.tolist(),
        "b": targets.DEFAULT_AFFINE_B.tolist(),
    },
    "bvmf": {"dim": 6, "param_seed": 0, "A": None, "b": None},
    "sphere_uniform": {"dim": 3},
    "circle": {"kappa": 1.0, "bingham": 0.5, "angle": 0.3},
    "simplex": {"alpha": [1.0] * 9, "games_csv": None, "synthetic_games": 0, "game_seed": 0},
    "network": {
        "adjacency_path": None, "synthetic_n": 8, "synthetic_seed": 0, "rank": 3,
        "prior_var_sigma": 230.0, "prior_var_c": 100.0, "likelihood_weight": 1.0,
    },
}


@dataclass
class ExperimentConfig:
    target: str
    sampler: str = "magnetic"
    step_size: object = 0.01
    num_steps: object = 10
    num_samples: int = 1000
    burn_in: Optional[int] = None
    seed: int = 0
    num_fields: int = 5
    field_scale: float = 1.0
    interleave_canonical: bool = False
    strict_reversibility: bool = False
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    ess_ceiling: float = 10_000
    output_dir: str = "runs"
    target_params: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def grid(self) -> list:
        """Expand list-valued step_size/num_steps into single-valued configs."""
        eps = self.step_size if isinstance(self.step_size, list) else [self.step_size]
        ns = self.num_steps if isinstance(self.num_steps, list) else [self.num_steps]
        return [replace(self, step_size=e, num_steps=n) for e, n in itertools.product(eps, ns)]

    @property
    def is_grid(self) -> bool:
        return isinstance(self.step_size, list) or isinstance(self.num_steps, list)

    def resolved_target_params(self) -> dict:
        params = dict(TARGET_PARAMS[self.target])
        params.update(self.target_params)
        return params

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_TYPES = {
    "target": str, "sampler": str, "num_samples": int, "burn_in": (int, type(None)),
    "seed": int, "num_fields": int, "field_scale": (int, float),
    "interleave_canonical": bool, "strict_reversibility": bool, "newton_tol": (int, float),
    "newton_max_iter": int, "ess_ceiling": (int, float), "output_dir": str,
    "target_params": dict, "schema_version": int,
}


def _is_number(x, integral=False):
    if isinstance(x, bool):
        return False
    return isinstance(x, int) if integral else isinstance(x, (int, float))


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if doc.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc.get('schema_version')!r}")
    if "target" not in doc:
        raise ConfigError("missing required key 'target'")
    for key, typ in _TYPES.items():
        if key in doc:
            val = doc[key]
            if isinstance(val, bool) and typ is not bool:
                raise ConfigError(f"{key} must not be a boolean")
            if not isinstance(val, typ):
                raise ConfigError(f"{key} has wrong type {type(val).__name__}")
    for key, integral in (("step_size", False), ("num_steps", True)):
        if key in doc:
            val = doc[key]
            vals = val if isinstance(val, list) else [val]
            if not vals or not all(_is_number(v, integral) for v in vals):
                raise ConfigError(f"{key} must be a {'integer' if integral else 'number'} or a list of them")
    cfg = ExperimentConfig(**doc)
    if cfg.target not in TARGET_PARAMS:
        raise ConfigError(f"unknown target {cfg.target!r}; expected one of {sorted(TARGET_PARAMS)}")
    if cfg.sampler not in SAMPLERS:
        raise ConfigError(f"unknown sampler {cfg.sampler!r}; expected one of {SAMPLERS}")
    bad = set(cfg.target_params) - set(TARGET_PARAMS[cfg.target])
    if bad:
        raise ConfigError(f"unknown target_params for {cfg.target}: {sorted(bad)}")
    for e in (cfg.step_size if isinstance(cfg.step_size, list) else [cfg.step_size]):
        if not e > 0:
            raise ConfigError("step_size must be positive")
    for n in (cfg.num_steps if isinstance(cfg.num_steps, list) else [cfg.num_steps]):
        if n < 1:
            raise ConfigError("num_steps must be >= 1")
    if cfg.num_samples < 1:
        raise ConfigError("num_samples must be >= 1")
    if cfg.burn_in is not None and cfg.burn_in < 0:
        raise ConfigError("burn_in must be >= 0")
    if cfg.num_fields < 1:
        raise ConfigError("num_fields must be >= 1")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc)


def build_target(cfg: ExperimentConfig, base_dir: Path = Path(".")) -> targets.TargetDensity:
    """Instantiate the target family named in the config."""
    p = cfg.resolved_target_params()
    fam = cfg.target
    try:
        if fam == "gaussian_affine":
            return targets.gaussian_affine_target(p["mu"], p["sigma_diag"], p["A"], p["b"])
        if fam == "bvmf":
            if p["A"] is not None and p["b"] is not None:
                A, b = np.asarray(p["A"], float), np.asarray(p["b"], float)
            else:
                A, b = targets.random_bvmf_parameters(int(p["dim"]), np.random.default_rng(p["param_seed"]))
            return targets.bvmf_target(A, b)
        if fam == "sphere_uniform":
            return targets.sphere_uniform_target(int(p["dim"]))
        if fam == "circle":
            return targets.circle_target(p["kappa"], p["bingham"], p["angle"])
        if fam == "simplex":
            alpha = np.asarray(p["alpha"], float)
            if p["games_csv"]:
                games = targets.read_games_csv(base_dir / p["games_csv"])
            elif p["synthetic_games"]:
                games = targets.synthetic_games(alpha.size, int(p["synthetic_games"]),
                                                np.random.default_rng(p["game_seed"]))
            else:
                games = []
            return targets.simplex_sphere_target(alpha, games)
        if fam == "network":
            if p["adjacency_path"]:
                D = targets.read_adjacency(base_dir / p["adjacency_path"])
            else:
                D = targets.synthetic_network(int(p["synthetic_n"]), int(p["rank"]),
                                              np.random.default_rng(p["synthetic_seed"]))
            return targets.network_eigenmodel_target(D, int(p["rank"]), p["prior_var_sigma"],
                                                     p["prior_var_c"], p["likelihood_weight"])
    except (KeyError, IndexError, TypeError, ValueError, OSError) as exc:
        raise ConfigError(f"bad target_params for {fam}: {exc}") from exc
    raise ConfigError(f"unknown target {fam!r}")
