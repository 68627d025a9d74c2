"""Command-line front end: ``framu run``, ``framu sweep`` and ``framu report``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import checkpoint
from .config import ConfigError, SimConfig, parse_config, serialize_config, set_value
from .core import DomainError, StructuralError
from .io import (
    REPORT_COLUMNS,
    ROUND_COLUMNS,
    SchemaError,
    attention_csv,
    fmt,
    read_csv,
    report_table_csv,
    rounds_csv,
    summary_csv,
    unlearning_report_csv,
    write_files,
)
from .sim import Simulation, SimulationError

logger = logging.getLogger("framu")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


def setup_logging() -> None:
    name = os.environ.get("FRAMU_LOG", "warn").strip().lower()
    level = _LEVELS.get(name, logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("framu").setLevel(level)
    if name not in _LEVELS:
        logger.warning("unknown FRAMU_LOG level %r, using warn", name)


def _prepare_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path


def run_to_dir(cfg: SimConfig, out: Path, resume: Optional[Path] = None) -> Simulation:
    """Run (or resume) one simulation and write its four output files."""
    out = _prepare_dir(Path(out))
    sim = checkpoint.load(cfg, resume) if resume is not None else Simulation(cfg)
    every = cfg.checkpoint_every
    while not sim.done:
        sim.step()
        if every and sim.round % every == 0 and not sim.done:
            write_files(out, {f"checkpoint_{sim.round:04d}.bin": checkpoint.dumps(sim)})
    n_agents = len(sim.agents)
    write_files(out, {
        "rounds.csv": rounds_csv(sim.logs, n_agents),
        "attention.csv": attention_csv(sim.snapshots),
        "unlearning_report.csv": unlearning_report_csv(sim.unlearning_report()),
        "config.cfg": serialize_config(cfg),
        "checkpoint.bin": checkpoint.dumps(sim),
    })
    return sim


def _load_cfg(path: str, seed: Optional[int]) -> SimConfig:
    cfg = parse_config(path)
    if seed is not None:
        cfg = set_value(cfg, "sim.seed", seed)
    return cfg


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args.config, args.seed)
    sim = run_to_dir(cfg, Path(args.out), Path(args.resume) if args.resume else None)
    last = sim.logs[-1] if sim.logs else None
    if last is not None:
        print(f"rounds={sim.round} final_mse={fmt(last.global_mse)} final_mae={fmt(last.global_mae)}")
    return 0


def _sweep_dir_name(param: str, value: str) -> str:
    return f"{param}={value}".replace(os.sep, "_")


def cmd_sweep(args: argparse.Namespace) -> int:
    base = _load_cfg(args.config, args.seed)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    cfgs = [set_value(base, args.param, v) for v in values]
    out = _prepare_dir(Path(args.out))
    rows = []
    for text, cfg in zip(values, cfgs):
        sim = run_to_dir(cfg, out / _sweep_dir_name(args.param, text))
        last = sim.logs[-1]
        converged_at = last.round if last.converged else ""
        rows.append([text, last.global_mse, last.global_mae, converged_at])
    write_files(out, {"sweep_summary.csv": summary_csv(rows)})
    print(f"sweep over {args.param}: {len(rows)} runs")
    return 0


def _report_values(in_dir: Path) -> dict[str, float]:
    rounds = read_csv(in_dir / "rounds.csv", ROUND_COLUMNS)
    if not rounds:
        raise SchemaError("rounds.csv has no data rows")
    path = in_dir / "unlearning_report.csv"
    if path.exists():
        rows = read_csv(path, REPORT_COLUMNS)
        if len(rows) != 1:
            raise SchemaError(f"{path.name}: expected one data row, found {len(rows)}")
        return {c: float(rows[0][c]) for c in REPORT_COLUMNS}
    last = rounds[-1]
    m, a = float(last["global_mse"]), float(last["global_mae"])
    vals = {c: 0.0 for c in REPORT_COLUMNS}
    vals.update(mse_before=m, mse_after=m, mae_before=a, mae_after=a)
    return vals


def summary_text(vals: dict[str, float]) -> str:
    lines = [
        f"forgotten points: {int(vals['n_forget'])}",
        f"validation MSE: {fmt(vals['mse_before'])} -> {fmt(vals['mse_after'])}",
        f"validation MAE: {fmt(vals['mae_before'])} -> {fmt(vals['mae_after'])}",
        f"forget-set RE: {fmt(vals['re_before'])} -> {fmt(vals['re_after'])} (retain {fmt(vals['re_retain'])})",
        f"activation distance: forget {fmt(vals['ad_forget'])}, retain {fmt(vals['ad_retain'])}",
    ]
    return "\n".join(lines) + "\n"


def cmd_report(args: argparse.Namespace) -> int:
    in_dir = Path(args.inp)
    if not (in_dir / "rounds.csv").exists():
        raise FileNotFoundError(f"{in_dir / 'rounds.csv'} not found")
    vals = _report_values(in_dir)
    text = summary_text(vals)
    write_files(in_dir, {"report.csv": report_table_csv(vals), "summary.txt": text})
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="framu", description="Federated RL unlearning simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one simulation")
    run.add_argument("--config", required=True, help="config file of dotted key = value lines")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override sim.seed")
    run.add_argument("--resume", default=None, help="checkpoint to continue from")
    run.set_defaults(func=cmd_run)

    sweep = sub.add_parser("sweep", help="run one simulation per parameter value")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", required=True, help="dotted config key, e.g. privacy.epsilon")
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--seed", type=int, default=None)
    sweep.set_defaults(func=cmd_sweep)

    report = sub.add_parser("report", help="summarize a run directory")
    report.add_argument("--in", dest="inp", required=True, help="run output directory")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SchemaError, checkpoint.CheckpointError) as exc:
        print(f"framu: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, SimulationError, DomainError, StructuralError) as exc:
        print(f"framu: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
