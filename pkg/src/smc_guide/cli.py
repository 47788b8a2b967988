"""Command-line entry point.

Subcommands: ``validate`` (config check only), ``sample`` (one SMC run),
``pilot`` (per-step ESS trace for choosing a resampling schedule), and
``experiment <id>`` (a named study).  Exit codes: 0 success, 2 configuration
error, 3 runtime failure; errors go to stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .config import EXPERIMENT_IDS, RunConfig, build_setup, parse_and_validate
from .errors import AllParticlesInfeasible, ConfigurationError, PropagationError
from .experiments import TRACE_HEADER, write_csv, write_meta
from .gmm import class_posterior
from .smc import run_sampler

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _error_json(exc: Exception) -> str:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, ConfigurationError):
        payload["violations"] = exc.violations
    if isinstance(exc, AllParticlesInfeasible):
        payload["t"] = exc.t
    return json.dumps(payload, sort_keys=True)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smc-guide")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("validate", "sample", "pilot"):
        sp = sub.add_parser(name)
        _common_args(sp)
    xp = sub.add_parser("experiment")
    xp.add_argument("experiment_id", choices=EXPERIMENT_IDS)
    _common_args(xp)
    return p


def _common_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", required=True, help="path to the YAML run config")
    sp.add_argument("--seed", type=int, default=None, help="override the config seed list")
    sp.add_argument("--threads", type=int, default=None,
                    help="worker cap (fallback: SMC_GUIDE_THREADS, then config)")
    sp.add_argument("--out", default=None, help="override the config output directory")
    sp.add_argument("--force", action="store_true", help="overwrite an existing run directory")


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        cfg.seeds = [args.seed]
        cfg.resolved["seeds"] = [args.seed]
    threads = args.threads
    if threads is None and os.environ.get("SMC_GUIDE_THREADS"):
        try:
            threads = int(os.environ["SMC_GUIDE_THREADS"])
        except ValueError as e:
            raise ConfigurationError([f"SMC_GUIDE_THREADS: not an integer: {e}"])
    if threads is not None:
        if threads < 1:
            raise ConfigurationError([f"threads: must be >= 1, got {threads}"])
        cfg.threads = threads
    if args.out is not None:
        cfg.output_dir = args.out
    return cfg


def _run_dir(cfg: RunConfig, label: str, force: bool) -> Path:
    seeds = cfg.seeds
    seed_tag = f"seed{seeds[0]}" if len(seeds) == 1 else f"seed{seeds[0]}x{len(seeds)}"
    out = Path(cfg.output_dir) / f"{label}-{cfg.digest()}-{seed_tag}"
    if out.exists():
        if not force:
            raise ConfigurationError(
                [f"output_dir: {out} already exists; pass --force to overwrite"]
            )
        shutil.rmtree(out)
    out.mkdir(parents=True)
    return out


def _cmd_validate(cfg: RunConfig) -> int:
    print(f"ok {cfg.digest()}")
    return EXIT_OK


def _cmd_sample(cfg: RunConfig, out_dir: Path) -> int:
    setup = build_setup(cfg)
    seed = cfg.seeds[0]
    result = run_sampler(setup, seed)
    states = result.particles.states
    labels = class_posterior(cfg.model, states).argmax(axis=1)
    log_lik = np.atleast_1d(cfg.likelihood.log_lik(states))
    write_csv(
        out_dir / "particles.csv",
        [f"x{i}" for i in range(cfg.model.d)] + ["class", "log_lik"],
        [tuple(states[i]) + (int(labels[i]), float(log_lik[i])) for i in range(len(states))],
    )
    write_csv(out_dir / "trace.csv", TRACE_HEADER,
              [(seed, r.t, r.ess, r.epoch, r.nfe) for r in result.trace])
    write_meta(out_dir / "meta.json", {
        "command": "sample", "digest": cfg.digest(), "seed": seed,
        "nfe_total": result.nfe_total, "config": cfg.resolved,
        "epochs": [
            {"t": e.trigger_t, "ess_pre": e.ess_pre, "ess_post": e.ess_post,
             "resampled": e.resampled} for e in result.epochs
        ],
    })
    print(f"wrote {out_dir} (nfe={result.nfe_total})")
    return EXIT_OK


def _cmd_pilot(cfg: RunConfig, out_dir: Path) -> int:
    setup = build_setup(cfg)
    seed = cfg.seeds[0]
    result = run_sampler(setup, seed, weigh_only=True, trace_all_steps=True)
    write_csv(out_dir / "trace.csv", TRACE_HEADER,
              [(seed, r.t, r.ess, r.epoch, r.nfe) for r in result.trace])
    write_meta(out_dir / "meta.json", {
        "command": "pilot", "digest": cfg.digest(), "seed": seed,
        "nfe_total": result.nfe_total, "config": cfg.resolved,
    })
    print(f"wrote {out_dir} (nfe={result.nfe_total})")
    return EXIT_OK


def _cmd_experiment(cfg: RunConfig, experiment_id: str, out_dir: Path) -> int:
    runner = experiments.RUNNERS[experiment_id]
    runner(cfg, out_dir)
    print(f"wrote {out_dir}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = parse_and_validate(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "validate":
            return _cmd_validate(cfg)
        if args.command == "experiment":
            out_dir = _run_dir(cfg, args.experiment_id, args.force)
            return _cmd_experiment(cfg, args.experiment_id, out_dir)
        out_dir = _run_dir(cfg, args.command, args.force)
        if args.command == "sample":
            return _cmd_sample(cfg, out_dir)
        return _cmd_pilot(cfg, out_dir)
    except ConfigurationError as e:
        print(_error_json(e), file=sys.stderr)
        return EXIT_CONFIG
    except (AllParticlesInfeasible, PropagationError) as e:
        print(_error_json(e), file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
