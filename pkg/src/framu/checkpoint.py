"""Binary checkpoint of a running simulation.

Layout (all integers little-endian)::

    offset  size  field
    0       8     magic  b"FRAMUCKP"
    8       4     u32 format version (currently 1)
    12      4     u32 round
    16      32    sha256 of the serialized config
    48      4     u32 section count
    52      ...   sections

Each section is::

    u16 name length, name (utf-8)
    u8  kind: 1 = float64 array, 2 = int64 array, 3 = utf-8 JSON
    u64 element count (kind 1/2) or byte count (kind 3)
    payload (little-endian float64 / int64, or raw bytes)

The environment is a pure function of the seed, so stored replay ids are
enough to rebuild the replay buffers.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .agent import GradientLedger
from .attention import AttentionEntry, AttentionSnapshot
from .config import SimConfig, config_hash
from .core import ParamVector
from .metrics import UnlearningReport
from .sim import AgentRoundStats, HolderRecord, RoundLog, Simulation, UnlearningEvent

MAGIC = b"FRAMUCKP"
FORMAT_VERSION = 1

_F64 = 1
_I64 = 2
_JSON = 3


class CheckpointError(ValueError):
    """Corrupt, incompatible or mismatched checkpoint."""


def _pack_section(name: str, kind: int, value) -> bytes:
    raw_name = name.encode("utf-8")
    head = struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", kind)
    if kind == _F64:
        arr = np.ascontiguousarray(value, dtype="<f8").reshape(-1)
        return head + struct.pack("<Q", arr.size) + arr.tobytes()
    if kind == _I64:
        arr = np.ascontiguousarray(value, dtype="<i8").reshape(-1)
        return head + struct.pack("<Q", arr.size) + arr.tobytes()
    payload = json.dumps(value, sort_keys=True, allow_nan=True).encode("utf-8")
    return head + struct.pack("<Q", len(payload)) + payload


def encode(round_index: int, cfg_hash: bytes, sections: list[tuple[str, int, Any]]) -> bytes:
    if len(cfg_hash) != 32:
        raise CheckpointError("config hash must be 32 bytes")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, round_index), cfg_hash, struct.pack("<I", len(sections))]
    parts.extend(_pack_section(n, k, v) for n, k, v in sections)
    return b"".join(parts)


def decode(data: bytes) -> tuple[int, bytes, dict[str, Any]]:
    """Parse a container into ``(round, config_hash, {name: value})``."""
    if len(data) < 52 or data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    version, round_index = struct.unpack_from("<II", data, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    cfg_hash = data[16:48]
    (count,) = struct.unpack_from("<I", data, 48)
    pos = 52
    out: dict[str, Any] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", data, pos)
            pos += 2
            name = data[pos:pos + nlen].decode("utf-8")
            pos += nlen
            kind, size = struct.unpack_from("<BQ", data, pos)
            pos += 9
            if kind in (_F64, _I64):
                dtype = "<f8" if kind == _F64 else "<i8"
                end = pos + 8 * size
                if end > len(data):
                    raise CheckpointError(f"section {name!r} truncated")
                out[name] = np.frombuffer(data[pos:end], dtype=dtype).copy()
            elif kind == _JSON:
                end = pos + size
                if end > len(data):
                    raise CheckpointError(f"section {name!r} truncated")
                out[name] = json.loads(data[pos:end].decode("utf-8"))
            else:
                raise CheckpointError(f"section {name!r} has unknown kind {kind}")
            pos = end
    except struct.error as exc:
        raise CheckpointError(f"truncated checkpoint: {exc}") from None
    if pos != len(data):
        raise CheckpointError("trailing bytes after last section")
    return round_index, cfg_hash, out


# -- simulation <-> sections ------------------------------------------------

def _params_json(p: ParamVector) -> list:
    return [p.n_actions, p.n_features, p.values.tolist()]


def _params_from(obj) -> ParamVector:
    a, f, vals = obj
    return ParamVector(np.asarray(vals, dtype=np.float64), int(a), int(f))


def _log_json(log: RoundLog) -> dict:
    return {
        "round": log.round,
        "global_mse": log.global_mse,
        "global_mae": log.global_mae,
        "perf": log.perf,
        "unlearned_count": log.unlearned_count,
        "converged": log.converged,
        "agents": [[s.n_ag, s.mean_attention, s.reward] for s in log.agents],
    }


def _log_from(obj) -> RoundLog:
    return RoundLog(
        round=obj["round"],
        global_mse=obj["global_mse"],
        global_mae=obj["global_mae"],
        perf=obj["perf"],
        unlearned_count=obj["unlearned_count"],
        agents=tuple(AgentRoundStats(int(n), m, r) for n, m, r in obj["agents"]),
        converged=obj["converged"],
    )


def _event_json(ev: UnlearningEvent) -> dict:
    return {
        "round": ev.round,
        "gate": ev.gate,
        "global_before": _params_json(ev.global_before),
        "global_after": _params_json(ev.global_after),
        "holders": [
            {
                "agent_id": h.agent_id,
                "before": _params_json(h.before),
                "after": _params_json(h.after),
                "forget_ids": list(h.forget_ids),
                "retain_ids": list(h.retain_ids),
            }
            for h in ev.holders
        ],
        "report": ev.report.as_dict(),
    }


def _event_from(obj) -> UnlearningEvent:
    holders = tuple(
        HolderRecord(
            h["agent_id"],
            _params_from(h["before"]),
            _params_from(h["after"]),
            tuple(h["forget_ids"]),
            tuple(h["retain_ids"]),
        )
        for h in obj["holders"]
    )
    return UnlearningEvent(
        obj["round"],
        _params_from(obj["global_before"]),
        _params_from(obj["global_after"]),
        obj["gate"],
        holders,
        UnlearningReport(**obj["report"]),
    )


def _snapshot_arrays(snapshots) -> tuple[np.ndarray, np.ndarray, list]:
    ints, scores = [], []
    for t, snaps in snapshots:
        for snap in snaps:
            for e in snap.entries:
                ints.append((t, snap.agent_id, e.point_id, e.modality))
                scores.append(e.score)
    n_agents_per_round = [[t, [s.agent_id for s in snaps]] for t, snaps in snapshots]
    return np.asarray(ints, dtype=np.int64).reshape(-1, 4), np.asarray(scores), n_agents_per_round


def _snapshots_from(ints: np.ndarray, scores: np.ndarray, layout) -> list:
    ints = ints.reshape(-1, 4)
    grouped: dict[tuple[int, int], list[AttentionEntry]] = {}
    for (t, agent, pid, mod), s in zip(ints.tolist(), scores.tolist()):
        grouped.setdefault((t, agent), []).append(AttentionEntry(pid, mod, s))
    out = []
    for t, agents in layout:
        out.append((t, [AttentionSnapshot(a, tuple(grouped.get((t, a), ()))) for a in agents]))
    return out


def snapshot_sections(sim: Simulation) -> list[tuple[str, int, Any]]:
    st = sim.state
    sections: list[tuple[str, int, Any]] = [
        ("sim.meta", _JSON, {"round": sim.round, "converged": sim.converged}),
        ("server.params", _F64, st.params.values),
        ("server.meta", _JSON, {
            "round": st.round,
            "perf_history": st.perf_history,
            "eps_converge": st.eps_converge,
            "theta_unlearn": st.theta_unlearn,
            "total_points": st.total_points,
            "gate": st.gate,
            "feature_unlearn_round": st.feature_unlearn_round,
        }),
        ("server.tombstones", _I64, sorted(st.tombstones)),
        ("rng.privacy", _JSON, [r.bit_generator.state for r in sim.privacy_rngs]),
        ("rng.retain", _JSON, sim.retain_rng.bit_generator.state),
        ("logs", _JSON, [_log_json(l) for l in sim.logs]),
        ("events", _JSON, [_event_json(e) for e in sim.events]),
    ]
    ints, scores, layout = _snapshot_arrays(sim.snapshots)
    sections += [
        ("snapshots.index", _I64, ints),
        ("snapshots.scores", _F64, scores),
        ("snapshots.layout", _JSON, layout),
    ]
    for a in sim.agents:
        p = f"agent.{a.agent_id}."
        ledger_ids = list(a.ledger.contributions)
        ledger_vals = (
            np.stack([a.ledger.contributions[i] for i in ledger_ids]) if ledger_ids else np.zeros(0)
        )
        sections += [
            (p + "params", _F64, a.params),
            (p + "initial_params", _F64, a.initial_params.values),
            (p + "replay", _I64, list(a.replay)),
            (p + "attention.ids", _I64, list(a.attention.scores)),
            (p + "attention.scores", _F64, list(a.attention.scores.values())),
            (p + "ledger.ids", _I64, ledger_ids),
            (p + "ledger.values", _F64, ledger_vals),
            (p + "meta", _JSON, {
                "epsilon_greedy": a.epsilon_greedy,
                "unknown_unlearn": a.unknown_unlearn,
                "rng": a.rng.bit_generator.state,
                "ledger_digest": a.ledger.digest(),
            }),
        ]
    return sections


def dumps(sim: Simulation) -> bytes:
    return encode(sim.round, config_hash(sim.cfg), snapshot_sections(sim))


def save(sim: Simulation, path) -> None:
    from .io import atomic_write_bytes

    atomic_write_bytes(Path(path), dumps(sim))


def restore(cfg: SimConfig, data: bytes) -> Simulation:
    """Rebuild a simulation from checkpoint bytes written under ``cfg``."""
    round_index, cfg_hash, sec = decode(data)
    if cfg_hash != config_hash(cfg):
        raise CheckpointError("checkpoint was written under a different config")
    sim = Simulation(cfg)
    try:
        meta = sec["sim.meta"]
        sim.round = meta["round"]
        sim.converged = meta["converged"]
        if sim.round != round_index:
            raise CheckpointError("header round disagrees with body")
        A, F = sim.state.params.shape
        sm = sec["server.meta"]
        st = sim.state
        st.params = ParamVector(sec["server.params"], A, F)
        st.round = sm["round"]
        st.perf_history = list(sm["perf_history"])
        st.eps_converge = sm["eps_converge"]
        st.theta_unlearn = sm["theta_unlearn"]
        st.total_points = sm["total_points"]
        st.gate = sm["gate"]
        st.feature_unlearn_round = sm["feature_unlearn_round"]
        st.tombstones = {int(i) for i in sec["server.tombstones"]}
        for rng, state in zip(sim.privacy_rngs, sec["rng.privacy"]):
            rng.bit_generator.state = state
        sim.retain_rng.bit_generator.state = sec["rng.retain"]
        sim.logs = [_log_from(o) for o in sec["logs"]]
        sim.events = [_event_from(o) for o in sec["events"]]
        sim.snapshots = _snapshots_from(sec["snapshots.index"], sec["snapshots.scores"], sec["snapshots.layout"])
        for a in sim.agents:
            p = f"agent.{a.agent_id}."
            a.params = sec[p + "params"].reshape(A, F).copy()
            a.initial_params = ParamVector(sec[p + "initial_params"], A, F)
            a.replay = {int(i): sim.env.lookup(int(i)) for i in sec[p + "replay"]}
            a.attention.scores = {
                int(i): float(s) for i, s in zip(sec[p + "attention.ids"], sec[p + "attention.scores"])
            }
            a.attention.modalities = {i: sim.env.lookup(i).modality for i in a.attention.scores}
            ledger = GradientLedger(A, F)
            vals = sec[p + "ledger.values"].reshape(-1, A, F)
            for i, v in zip(sec[p + "ledger.ids"], vals):
                ledger.contributions[int(i)] = v.copy()
            a.ledger = ledger
            am = sec[p + "meta"]
            if ledger.digest() != am["ledger_digest"]:
                raise CheckpointError(f"agent {a.agent_id} ledger digest mismatch")
            a.epsilon_greedy = am["epsilon_greedy"]
            a.unknown_unlearn = am["unknown_unlearn"]
            a.rng.bit_generator.state = am["rng"]
    except KeyError as exc:
        raise CheckpointError(f"missing checkpoint section {exc}") from None
    return sim


def load(cfg: SimConfig, path) -> Simulation:
    return restore(cfg, Path(path).read_bytes())
