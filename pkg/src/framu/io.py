"""CSV output, schema checks and atomic file writes."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import re
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .metrics import UnlearningReport
from .sim import RoundLog

logger = logging.getLogger(__name__)

ROUND_COLUMNS = ("round", "global_mse", "global_mae", "perf", "unlearned_count", "converged")
AGENT_COLUMNS = ("n_ag", "mean_att", "reward")
ATTENTION_COLUMNS = ("round", "agent_id", "point_id", "modality", "score")
REPORT_COLUMNS = tuple(UnlearningReport.columns())
SUMMARY_COLUMNS = ("value", "final_mse", "final_mae", "rounds_to_converge")
TABLE_COLUMNS = ("model", "mse", "mae", "re", "ad")


class SchemaError(ValueError):
    """A CSV file lacks a required column."""


def fmt(value) -> str:
    """Shortest round-trip text for numbers; ``1``/``0`` for booleans."""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if value is None:
        return ""
    x = float(value)
    if math.isnan(x):
        return "nan"
    return repr(x)


def _table(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def rounds_header(n_agents: int) -> list[str]:
    cols = list(ROUND_COLUMNS)
    for k in range(n_agents):
        cols += [f"{c}_{k}" for c in AGENT_COLUMNS]
    return cols


def rounds_csv(logs: Sequence[RoundLog], n_agents: int) -> str:
    rows = []
    for log in logs:
        if len(log.agents) != n_agents:
            raise ValueError(f"round {log.round} has {len(log.agents)} agents, expected {n_agents}")
        row = [log.round, log.global_mse, log.global_mae, log.perf, log.unlearned_count, log.converged]
        for s in log.agents:
            row += [s.n_ag, s.mean_attention, s.reward]
        rows.append(row)
    return _table(rounds_header(n_agents), rows)


def attention_csv(snapshots) -> str:
    lines = [",".join(ATTENTION_COLUMNS)]
    for t, snaps in snapshots:
        for snap in snaps:
            lines.extend(snap.to_records(t))
    return "\n".join(lines) + "\n"


def unlearning_report_csv(report: UnlearningReport) -> str:
    d = report.as_dict()
    return _table(REPORT_COLUMNS, [[d[c] for c in REPORT_COLUMNS]])


def summary_csv(rows: Sequence[Sequence]) -> str:
    return _table(SUMMARY_COLUMNS, rows)


def report_table_csv(report: Mapping[str, float]) -> str:
    """Original/Unlearned comparison rows from one unlearning report row."""
    rows = [
        ["Original", report["mse_before"], report["mae_before"], report["re_before"], 0.0],
        ["Unlearned", report["mse_after"], report["mae_after"], report["re_after"], report["ad_forget"]],
    ]
    return _table(TABLE_COLUMNS, rows)


_AGENT_COLUMN = re.compile(r"^(n_ag|mean_att|reward)_\d+$")


def read_csv(path: Path, required: Sequence[str]) -> list[dict[str, str]]:
    """Read a CSV, requiring ``required`` columns and warning on extras.

    Per-agent ``rounds.csv`` columns are expected and never warned about.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path.name}: missing column {col!r}")
        extra = [c for c in header if c not in required and not _AGENT_COLUMN.match(c)]
        if extra:
            logger.warning("%s: ignoring extra columns %s", path.name, ", ".join(extra))
        return list(reader)


def atomic_write_bytes(path: Path, data: bytes) -> None:
    write_files(path.parent, {path.name: data})


def _umask() -> int:
    current = os.umask(0)
    os.umask(current)
    return current


def write_files(out_dir: Path, files: Mapping[str, bytes | str]) -> None:
    """Write several files so that either all appear or none do.

    Each payload goes to a temporary file in ``out_dir`` first; renames
    happen only once every temporary file has been written.
    """
    out_dir = Path(out_dir)
    mode = 0o666 & ~_umask()
    staged: list[tuple[str, Path]] = []
    try:
        for name, payload in files.items():
            data = payload.encode("utf-8") if isinstance(payload, str) else payload
            fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=out_dir)
            staged.append((name, Path(tmp)))
            os.chmod(tmp, mode)
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
        for name, tmp in staged:
            os.replace(tmp, out_dir / name)
    except OSError as exc:
        for _, tmp in staged:
            try:
                tmp.unlink()
            except FileNotFoundError:
                pass
        raise OSError(f"cannot write to {out_dir}: {exc.strerror or exc}") from exc
