"""Byte-deterministic result files and the parameter sweep runner.

Files written per run:

``metrics.csv``
    ``round,client_id,train_loss,test_accuracy``; one row per evaluated
    (round, client), floats with 6 decimals, LF endings.
``selection_counts.csv``
    N rows of N integers, no header. Row = target client, column = source
    client, entry = rounds in which the source was selected.
``summary.json``
    Keys, in this order: ``config_hash``, ``algorithm``, ``ablation``,
    ``master_seed``, ``total_rounds``, ``num_clients``,
    ``per_client_final_accuracy``, ``mean_accuracy``. Floats are written at
    full precision (shortest round-trip repr).
``config.json``
    The fully-defaulted configuration that produced the run.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import ExperimentConfig, dump_config, with_overrides
from .orchestrator import RunResult, run_experiment

log = logging.getLogger(__name__)

SWEEP_AXES = ("alpha", "local_epochs", "classes_per_client", "algorithm", "ablation")


def _write(path: Path, text: str) -> None:
    with path.open("w", newline="\n") as fh:
        fh.write(text)


def metrics_csv(result: RunResult) -> str:
    lines = ["round,client_id,train_loss,test_accuracy"]
    for rec in result.records:
        for cid, (loss, acc) in enumerate(zip(rec.train_loss, rec.test_accuracy)):
            lines.append(f"{rec.round},{cid},{loss:.6f},{acc:.6f}")
    return "\n".join(lines) + "\n"


def selection_counts_csv(result: RunResult) -> str:
    return "".join(",".join(str(int(v)) for v in row) + "\n" for row in result.selection_counts)


def summary_dict(result: RunResult) -> dict:
    cfg = result.config
    return {
        "config_hash": result.config_hash,
        "algorithm": cfg.algorithm,
        "ablation": cfg.ablation,
        "master_seed": cfg.master_seed,
        "total_rounds": cfg.rounds,
        "num_clients": len(result.final_accuracy),
        "per_client_final_accuracy": [float(a) for a in result.final_accuracy],
        "mean_accuracy": float(result.mean_accuracy),
    }


def write_outputs(result: RunResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "metrics.csv": metrics_csv(result),
        "selection_counts.csv": selection_counts_csv(result),
        "summary.json": json.dumps(summary_dict(result), indent=2) + "\n",
        "config.json": dump_config(result.config),
    }
    paths = []
    for name, text in files.items():
        path = out / name
        _write(path, text)
        paths.append(path)
    return paths


@dataclass(frozen=True)
class SweepSpec:
    base: ExperimentConfig
    axis: str
    values: tuple
    seeds: tuple[int, ...]

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"unknown sweep axis {self.axis!r}; expected one of {SWEEP_AXES}")
        if not self.values:
            raise ValueError("sweep needs at least one axis value")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")


def parse_axis_values(axis: str, raw: str) -> tuple:
    items = [v.strip() for v in raw.split(",") if v.strip()]
    if axis == "alpha":
        return tuple(float(v) for v in items)
    if axis in ("local_epochs", "classes_per_client"):
        return tuple(int(v) for v in items)
    return tuple(items)


def sweep_config(base: ExperimentConfig, axis: str, value, seed: int) -> ExperimentConfig:
    changes: dict = {"master_seed": seed}
    if axis == "alpha":
        changes.update({"data.partition.scheme": "dirichlet", "data.partition.alpha": value})
    elif axis == "classes_per_client":
        changes.update({"data.partition.scheme": "pathological", "data.partition.classes_per_client": value})
    elif axis == "local_epochs":
        changes["hyper.local_epochs"] = value
    else:
        changes[axis] = value
    return with_overrides(base, **changes)


def _value_label(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _sort_key(value):
    return (0, value, "") if isinstance(value, (int, float)) else (1, 0, str(value))


def run_sweep(spec: SweepSpec, out_dir: str | Path, workers: int = 1) -> Path:
    """Run every (axis value, seed) pair into its own subdirectory.

    A failing sub-run is recorded with its error in the ``status`` column
    and does not stop the others. Returns the path of ``sweep_summary.csv``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(v, s) for v in sorted(spec.values, key=_sort_key) for s in sorted(spec.seeds)]

    def one(job):
        value, seed = job
        sub = out / f"{spec.axis}={_value_label(value)}" / f"seed={seed}"
        try:
            cfg = sweep_config(spec.base, spec.axis, value, seed)
            result = run_experiment(cfg)
            write_outputs(result, sub)
            return f"{result.mean_accuracy:.6f}", str(cfg.rounds - 1), "ok"
        except Exception as err:  # isolate failures, keep the sweep going
            log.warning("sweep run %s=%s seed=%s failed: %s", spec.axis, value, seed, err)
            return "", "", f"error: {err}".replace("\n", " ")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, jobs))
    else:
        rows = [one(job) for job in jobs]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["axis_value", "seed", "mean_accuracy", "final_round", "status"])
    for (value, seed), (acc, final_round, status) in zip(jobs, rows):
        writer.writerow([_value_label(value), seed, acc, final_round, status])
    path = out / "sweep_summary.csv"
    _write(path, buf.getvalue())
    return path


def read_sweep_summary(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def mean_by_value(rows: Sequence[dict[str, str]]) -> dict[str, float]:
    groups: dict[str, list[float]] = {}
    for row in rows:
        if row["status"] == "ok":
            groups.setdefault(row["axis_value"], []).append(float(row["mean_accuracy"]))
    return {k: sum(v) / len(v) for k, v in groups.items()}
