"""Command-line entry point: ``frameskip <subcommand> [--config FILE] ...``.

Exit status is 0 on success, 1 when ``--assert`` is given and a check bound
to the config fails, and 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from importlib import resources
from pathlib import Path

from .envs.gridworld import CalibrationError, calibrate_pit_penalty, canonical_spec, gridworld_to_tabular, load_map
from .harness.config import Config, ConfigError, ExperimentConfig
from .harness.experiments import output_root, run_experiment
from .harness.results import write_csv
from .tabular import price_of_inertia

COMMANDS = {
    "verify-bounds": ("verify-bounds", "exact checks of the action-repetition bounds"),
    "run-prediction": ("prediction", "TD_d(lambda) on the chain"),
    "run-control": ("control", "control learners at fixed repetition"),
    "run-bandit": ("bandit", "EXP3.1 over repetition values"),
    "sweep-d": ("sweep-d", "gamma x d grid of final scores"),
}


def default_config(kind: str) -> Path:
    return Path(str(resources.files("frameskip") / "configs" / f"{kind}.cfg"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="frameskip", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (kind, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help=f"config file (default: bundled {kind}.cfg)")
        p.add_argument("--seed", type=int, help="master seed (overrides experiment.master_seed)")
        p.add_argument("--seeds", type=int, help="number of seeds (overrides experiment.seeds)")
        p.add_argument("--out", type=Path, help="output root (default: $FSRL_OUT or ./runs)")
        p.add_argument("--assert", dest="check", action="store_true", help="exit 1 if any bound check fails")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for independent seeds")
        p.set_defaults(kind=kind)
    p = sub.add_parser("calibrate-grid", help="pit penalties that hit target prices of inertia")
    p.add_argument("--map", default="canonical", help="map file, or 'canonical'")
    p.add_argument("--targets", type=float, nargs="+", default=[2.13, 10.12, 55.26])
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", type=Path, help="output root (default: $FSRL_OUT or ./runs)")
    p.set_defaults(kind=None)
    return parser


def load_experiment(args) -> ExperimentConfig:
    path = args.config or default_config(args.kind)
    cfg = Config.load(path)
    if args.seed is not None:
        cfg.set("experiment", "master_seed", args.seed)
    if args.seeds is not None:
        cfg.set("experiment", "seeds", args.seeds)
    return ExperimentConfig.from_config(cfg)


def calibrate(args) -> int:
    spec = canonical_spec() if args.map == "canonical" else load_map(args.map)
    rows = []
    for target in args.targets:
        penalty = calibrate_pit_penalty(spec, target, tol=args.tol)
        delta = price_of_inertia(gridworld_to_tabular(spec.with_penalty(penalty))).delta
        rows.append([target, penalty, delta])
        print(f"target {target:g}: pit_penalty {penalty:.6g} (delta {delta:.6g})")
    path = write_csv(output_root(args.out) / "calibration" / "penalties.csv", ("target_delta", "pit_penalty", "delta_m"), rows)
    print(path)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "calibrate-grid":
            return calibrate(args)
        if args.jobs < 1:
            raise ConfigError("--jobs", "must be at least 1")
        exp = load_experiment(args)
        outcome = run_experiment(exp, output_root(args.out), jobs=args.jobs, expected_kind=args.kind)
    except (ConfigError, CalibrationError, FileNotFoundError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    for check in outcome.checks:
        print(check.line())
    print(outcome.directory)
    if args.check and not outcome.passed:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
