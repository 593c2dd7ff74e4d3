"""Command-line entry point: ``fedcca run | sweep | export-data``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import parse_config, with_overrides
from .data import export_clients_csv, heterogeneity_score, label_overlap
from .errors import ConfigError, InfeasiblePartitionError, InvalidInputError
from .orchestrator import build_data, run_experiment
from .outputs import SWEEP_AXES, SweepSpec, parse_axis_values, run_sweep, write_outputs

OUT_DIR_ENV = "FEDCCA_OUT_DIR"


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get(OUT_DIR_ENV)
    if not out:
        raise ConfigError(f"no output directory: pass --out-dir or set {OUT_DIR_ENV}")
    return Path(out)


def _parse_seeds(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {raw!r}") from None


def cmd_run(args) -> int:
    cfg = parse_config(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.rounds is not None:
        overrides["rounds"] = args.rounds
    if args.algorithm is not None:
        overrides["algorithm"] = args.algorithm
    if overrides:
        cfg = with_overrides(cfg, **overrides)
    out = _out_dir(args)
    result = run_experiment(cfg, workers=args.workers)
    write_outputs(result, out)
    print(f"{cfg.algorithm}: mean accuracy {result.mean_accuracy:.4f} over "
          f"{len(result.final_accuracy)} clients -> {out}")
    return 0


def cmd_sweep(args) -> int:
    base = parse_config(args.config)
    try:
        values = parse_axis_values(args.axis, args.values)
    except ValueError as err:
        raise ConfigError(f"bad --values for axis {args.axis}: {err}") from None
    spec = SweepSpec(base, args.axis, values, _parse_seeds(args.seeds))
    path = run_sweep(spec, _out_dir(args), workers=args.workers)
    print(f"sweep over {args.axis}: {len(values) * len(spec.seeds)} runs -> {path}")
    return 0


def cmd_export(args) -> int:
    cfg = parse_config(args.config)
    clients = build_data(cfg)
    out = _out_dir(args)
    export_clients_csv(clients, out)
    overlap = sorted(label_overlap(clients))
    print(f"{len(clients)} clients -> {out} (heterogeneity {heterogeneity_score(clients):.4f}, "
          f"shared labels {overlap})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcca", description="Federated learning simulator (FedCCA and baselines).")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="{run,sweep,export-data}")

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--rounds", type=int)
    run.add_argument("--algorithm", choices=["fedcca", "fedavg", "fedprox", "local_only"])
    run.add_argument("--out-dir")
    run.add_argument("--workers", type=int, default=1, help="threads for the client training phase")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run an axis x seeds grid")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", required=True, help="comma-separated axis values")
    sweep.add_argument("--seeds", required=True, help="comma-separated master seeds")
    sweep.add_argument("--out-dir")
    sweep.add_argument("--workers", type=int, default=1, help="concurrent sub-runs")
    sweep.set_defaults(func=cmd_sweep)

    export = sub.add_parser("export-data", help="write the generated client datasets as CSV")
    export.add_argument("--config", required=True)
    export.add_argument("--out-dir")
    export.set_defaults(func=cmd_export)
    return parser


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidInputError, InfeasiblePartitionError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
