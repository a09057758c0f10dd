"""Command-line front end.

    magmcmc sample CONFIG [--grid]
    magmcmc geodesic {euclidean3,sphere2,so3} --seed S --eps E --steps N --out PATH
    magmcmc check {core,constrained,all} --seed S [--report PATH] [--thresholds JSON]
    magmcmc ess CSV --ceiling C

Exit codes: 0 success, 1 bad input (config, arguments, CSV), 2 runtime
failure, 3 failed verification checks.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from magmcmc import diagnostics
from magmcmc.config import ConfigError, ExperimentConfig, build_target, load_config
from magmcmc.errors import DegenerateSeries, MagMCMCError, NumericalFailure
from magmcmc.integrator import IntegratorParams, integrate_arrays
from magmcmc.magnetic import MagneticField
from magmcmc.manifolds import Euclidean, SpecialOrthogonal, sample_momentum
from magmcmc.samplers import ChainConfig, ChainOutput, derive_seeds, random_fields, run_chain
from magmcmc.targets import TargetDensity, sphere_uniform_target

log = logging.getLogger("magmcmc")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME, EXIT_CHECKS = 0, 1, 2, 3
# chain statistics that depend on the clock rather than on (config, seed)
TIMING_KEYS = ("wall_time_seconds", "min_ess_per_second", "mean_ess_per_second")


def _fmt(x) -> str:
    return "%.17g" % x


def worker_count(num_jobs: int) -> int:
    cap = os.environ.get("MAGMCMC_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError:
            log.warning("ignoring non-integer MAGMCMC_THREADS=%r", cap)
    return max(1, min(n, num_jobs))


# -- sample ------------------------------------------------------------------

@dataclass
class ChainJob:
    directory: Path
    config: ChainConfig


def _chain_jobs(cfg: ExperimentConfig, run_dir: Path, base_dir: Path) -> list:
    target = build_target(cfg, base_dir)
    common = dict(
        step_size=float(cfg.step_size), num_steps=int(cfg.num_steps), num_samples=cfg.num_samples,
        burn_in=cfg.burn_in, sampler=cfg.sampler, interleave_canonical=cfg.interleave_canonical,
        strict_reversibility=cfg.strict_reversibility, newton_tol=cfg.newton_tol,
        newton_max_iter=cfg.newton_max_iter,
    )
    if cfg.sampler != "magnetic":
        return [ChainJob(run_dir / "chain0", ChainConfig(target, seed=cfg.seed, **common))]
    fields = random_fields(target.dim, cfg.num_fields, cfg.seed, cfg.field_scale)
    seeds = derive_seeds(cfg.seed, cfg.num_fields)
    return [
        ChainJob(run_dir / f"chain{i}", ChainConfig(target, field=f, seed=s, **common))
        for i, (f, s) in enumerate(zip(fields, seeds))
    ]


def chain_stats(out: ChainOutput, ceiling: float) -> dict:
    stats = {
        "acceptance_rate": out.acceptance_rate,
        "newtonFailureCount": int(out.newton_failure_count),
        "wall_time_seconds": out.wall_time_seconds,
        "L": out.field_matrix.tolist(),
    }
    try:
        stats.update(diagnostics.ess_report(out.samples, ceiling, out.wall_time_seconds).to_dict())
    except DegenerateSeries as exc:
        stats.update(per_coordinate=None, min_ess=None, mean_ess=None, min_ess_per_second=None,
                     mean_ess_per_second=None, truncation_ceiling=ceiling, ess_note=str(exc))
    return stats


def write_samples(path: Path, out: ChainOutput) -> None:
    m = out.samples.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["idx"] + [f"q{j}" for j in range(m)] + ["H", "accepted"]) + "\n")
        for i, (q, h, a) in enumerate(zip(out.samples, out.hamiltonian_values, out.accept_flags)):
            fh.write(",".join([str(i)] + [_fmt(v) for v in q] + [_fmt(h), str(int(a))]) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, run_dir: Path, base_dir: Path) -> dict:
    jobs = _chain_jobs(cfg, run_dir, base_dir)
    with ThreadPoolExecutor(max_workers=worker_count(len(jobs))) as pool:
        outputs = list(pool.map(lambda j: run_chain(j.config), jobs))
    # single writer after join
    chains = []
    for job, out in zip(jobs, outputs):
        job.directory.mkdir(parents=True, exist_ok=True)
        write_samples(job.directory / "samples.csv", out)
        stats = chain_stats(out, cfg.ess_ceiling)
        # wall-clock fields live apart so every other file is byte-reproducible
        _write_json(job.directory / "stats.json", {k: v for k, v in stats.items() if k not in TIMING_KEYS})
        _write_json(job.directory / "timing.json", {k: stats[k] for k in TIMING_KEYS})
        chains.append({"chain": job.directory.name, "seed": job.config.seed,
                       "min_ess": stats["min_ess"], "acceptance_rate": stats["acceptance_rate"]})
    scored = [c for c in chains if c["min_ess"] is not None]
    best = max(scored, key=lambda c: c["min_ess"])["chain"] if scored else None
    summary = {"config": cfg.to_dict(), "chains": chains, "best_chain": best}
    _write_json(run_dir / "summary.json", summary)
    return summary


def cmd_sample(args) -> int:
    try:
        cfg = load_config(args.config)
        if cfg.is_grid and not args.grid:
            raise ConfigError("step_size/num_steps are lists; pass --grid to expand them")
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    base_dir = Path(args.config).resolve().parent
    out_root = Path(cfg.output_dir)
    try:
        for point in cfg.grid():
            run_dir = out_root / f"eps{point.step_size:g}_N{point.num_steps}" if cfg.is_grid else out_root
            summary = run_experiment(point, run_dir, base_dir)
            log.info("%s: best chain %s", run_dir, summary["best_chain"])
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except (MagMCMCError, NumericalFailure, ValueError, OSError) as exc:
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


# -- geodesic ----------------------------------------------------------------

GEODESIC_MANIFOLDS = ("euclidean3", "sphere2", "so3")


def _free_target(manifold) -> TargetDensity:
    return TargetDensity(manifold, lambda q: 0.0, np.zeros_like, "free")


def geodesic_target(name: str) -> TargetDensity:
    if name == "euclidean3":
        return _free_target(Euclidean(3))
    if name == "sphere2":
        return sphere_uniform_target(3)
    if name == "so3":
        return _free_target(SpecialOrthogonal(3))
    raise ValueError(f"unknown manifold {name!r}")


def trace_geodesic(name: str, seed: int, eps: float, steps: int, zero_field: bool = False,
                   field_scale: float = 1.0):
    """Forward trajectory from a random start and the backward one from its
    endpoint with -eps. Returns (forward, backward, L), positions only."""
    target = geodesic_target(name)
    rng = np.random.default_rng(seed)
    m = target.dim
    field = MagneticField.zero(m) if zero_field else MagneticField.random(m, rng, field_scale)
    q0 = target.start()
    p0 = sample_momentum(target.manifold, q0, rng)
    params = IntegratorParams(eps, steps, newton_tol=1e-13)
    q1, p1, fwd, _ = integrate_arrays(q0, p0, target.manifold, target.grad_potential,
                                      field.factorization, params, record=True)
    _, _, bwd, _ = integrate_arrays(q1, p1, target.manifold, target.grad_potential,
                                    field.factorization, params.reversed(), record=True)
    return np.array([q for q, _ in fwd]), np.array([q for q, _ in bwd]), field.matrix


def write_geodesic(path: Path, name: str, forward: np.ndarray, backward: np.ndarray) -> None:
    m = forward.shape[1]
    header = ["direction", "step"] + [f"q{j}" for j in range(m)]
    if name == "so3":
        header += ["a0", "a1", "a2"]
    ones = np.ones(3)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for label, traj in (("forward", forward), ("backward", backward)):
            for i, q in enumerate(traj):
                row = [label, str(i)] + [_fmt(v) for v in q]
                if name == "so3":
                    # column-major flattening
                    row += [_fmt(v) for v in q.reshape(3, 3, order="F") @ ones]
                fh.write(",".join(row) + "\n")


def cmd_geodesic(args) -> int:
    if not args.eps > 0 or args.steps < 1:
        log.error("need --eps > 0 and --steps >= 1")
        return EXIT_INPUT
    try:
        fwd, bwd, L = trace_geodesic(args.manifold, args.seed, args.eps, args.steps,
                                     args.zero_field, args.field_scale)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_geodesic(out, args.manifold, fwd, bwd)
    except (MagMCMCError, NumericalFailure, OSError) as exc:
        log.error("geodesic failed: %s", exc)
        return EXIT_RUNTIME
    gap = float(np.max(np.abs(bwd[::-1] - fwd)))
    print(json.dumps({"manifold": args.manifold, "steps": args.steps, "eps": args.eps,
                      "forward_backward_gap": gap, "L": L.tolist()}))
    return EXIT_OK


# -- check -------------------------------------------------------------------

def _parse_thresholds(text):
    if text is None:
        return None
    p = Path(text)
    doc = json.loads(p.read_text() if p.is_file() else text)
    if not isinstance(doc, dict):
        raise ValueError("thresholds must be a JSON object")
    return {k: float(v) for k, v in doc.items()}


def cmd_check(args) -> int:
    try:
        thresholds = _parse_thresholds(args.thresholds)
        reports = diagnostics.run_check_suite(args.suite, args.seed, thresholds)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    text = diagnostics.format_reports(reports)
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    failed = [r.check_name for r in reports if not r.passed]
    if failed:
        log.error("failed checks: %s", ", ".join(failed))
        return EXIT_CHECKS
    return EXIT_OK


# -- ess ---------------------------------------------------------------------

def read_sample_columns(path) -> np.ndarray:
    """The q-columns of a samples.csv as an (n, m) array."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("empty file")
    header = rows[0]
    cols = [i for i, h in enumerate(header) if h.startswith("q") and h[1:].isdigit()]
    if not cols:
        raise ValueError("no q columns in header")
    try:
        data = np.array([[float(r[i]) for i in cols] for r in rows[1:]], dtype=float)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed row: {exc}") from None
    return data.reshape(-1, len(cols))


def cmd_ess(args) -> int:
    try:
        X = read_sample_columns(args.csv)
        rep = diagnostics.ess_report(X, args.ceiling)
    except (OSError, ValueError) as exc:
        log.error("%s: %s", args.csv, exc)
        return EXIT_INPUT
    print(json.dumps({"per_coordinate": [float(v) for v in rep.per_coordinate],
                      "min": rep.min_ess, "mean": rep.mean_ess, "ceiling": args.ceiling}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magmcmc", description="Magnetic manifold HMC experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample", help="run chains from a JSON config")
    s.add_argument("config")
    s.add_argument("--grid", action="store_true", help="expand list-valued step_size/num_steps")
    s.set_defaults(func=cmd_sample)

    g = sub.add_parser("geodesic", help="trace a magnetic geodesic forward and back")
    g.add_argument("manifold", choices=GEODESIC_MANIFOLDS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--eps", type=float, default=0.01)
    g.add_argument("--steps", type=int, default=1000)
    g.add_argument("--out", required=True)
    g.add_argument("--zero-field", action="store_true", help="L = 0 (canonical geodesic)")
    g.add_argument("--field-scale", type=float, default=1.0)
    g.set_defaults(func=cmd_geodesic)

    c = sub.add_parser("check", help="run the integrator verification battery")
    c.add_argument("suite", choices=diagnostics.SUITES)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--report")
    c.add_argument("--thresholds", help="JSON object (inline or file) overriding default thresholds")
    c.set_defaults(func=cmd_check)

    e = sub.add_parser("ess", help="effective sample size of a samples.csv")
    e.add_argument("csv")
    e.add_argument("--ceiling", type=float, default=10_000)
    e.set_defaults(func=cmd_ess)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
