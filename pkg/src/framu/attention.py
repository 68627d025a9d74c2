"""Attention scores at point, feature, modality and fleet level.

Scores are stateful: a point enters at ``init_score``, gains ``eta * |td|``
each time it takes part in a TD update, and loses a factor ``rho`` per
round. Everything is capped to ``[0, a_max]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import DataPoint, DomainError, ParamVector, StructuralError

INIT_SCORE = 1.0


@dataclass(frozen=True)
class Thresholds:
    """Cut-offs driving unlearning decisions.

    Attributes:
        global_theta: fleet-average point attention below which a point is
            unlearned.
        local_delta: local attention below which an agent purges a point on
            its own (only when local unlearning is enabled).
        outdated_threshold: rounds a point may stay in use after it became
            outdated.
        irrelevant_threshold: feature attention below which a feature's
            coefficients are scaled down in the global model.
    """

    global_theta: float = 0.1
    local_delta: float = 0.05
    outdated_threshold: int = 1
    irrelevant_threshold: float = 0.1

    def __post_init__(self):
        for name in ("global_theta", "local_delta", "outdated_threshold", "irrelevant_threshold"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class AttentionEntry:
    point_id: int
    modality: int
    score: float


@dataclass(frozen=True)
class AttentionSnapshot:
    """Immutable copy of one agent's table, sorted by point id."""

    agent_id: int
    entries: tuple[AttentionEntry, ...]

    def as_dict(self) -> dict[int, float]:
        return {e.point_id: e.score for e in self.entries}

    def mean(self) -> float:
        if not self.entries:
            return 0.0
        return float(np.mean([e.score for e in self.entries]))

    def to_records(self, round_index: int) -> list[str]:
        return [
            f"{round_index},{self.agent_id},{e.point_id},{e.modality},{float(e.score)!r}"
            for e in self.entries
        ]


class AttentionTable:
    """Per-agent map from point id to attention score.

    Owned by a single agent; the server only ever sees snapshots.
    """

    def __init__(self, eta: float = 0.05, rho: float = 0.95, a_max: float = 1.0):
        if eta < 0:
            raise DomainError("eta must be non-negative")
        if not 0 < rho <= 1:
            raise DomainError("rho must lie in (0, 1]")
        if a_max <= 0:
            raise DomainError("a_max must be positive")
        self.eta = eta
        self.rho = rho
        self.a_max = a_max
        self.scores: dict[int, float] = {}
        self.modalities: dict[int, int] = {}

    def __contains__(self, point_id: int) -> bool:
        return point_id in self.scores

    def __len__(self) -> int:
        return len(self.scores)

    def get(self, point_id: int, default: float = INIT_SCORE) -> float:
        return self.scores.get(point_id, default)

    def add(self, point: DataPoint, params: ParamVector | None = None) -> float:
        score = min(init_score(point, params), self.a_max)
        self.scores[point.id] = score
        self.modalities[point.id] = point.modality
        return score

    def bump(self, point_id: int, delta: float) -> float:
        score = bump_on_td(self.scores[point_id], delta, self.eta, self.a_max)
        self.scores[point_id] = score
        return score

    def decay(self) -> None:
        if self.rho == 1.0:
            return
        for k in self.scores:
            self.scores[k] *= self.rho

    def remove(self, point_id: int) -> None:
        self.scores.pop(point_id, None)
        self.modalities.pop(point_id, None)

    def copy(self) -> "AttentionTable":
        other = AttentionTable(self.eta, self.rho, self.a_max)
        other.scores = dict(self.scores)
        other.modalities = dict(self.modalities)
        return other

    def snapshot(self, agent_id: int) -> AttentionSnapshot:
        entries = tuple(
            AttentionEntry(pid, self.modalities.get(pid, 0), self.scores[pid])
            for pid in sorted(self.scores)
        )
        return AttentionSnapshot(agent_id, entries)


def init_score(point: DataPoint, params: ParamVector | None = None) -> float:
    """Initial attention of a newly observed point (input independent)."""
    return INIT_SCORE


def bump_on_td(score: float, delta: float, eta: float, a_max: float = 1.0) -> float:
    return min(score + eta * abs(delta), a_max)


def decay_round(table: AttentionTable) -> AttentionTable:
    """Return a copy of ``table`` with every score multiplied by ``rho``."""
    out = table.copy()
    out.decay()
    return out


def modality_average(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise DomainError("modality_average of an empty vector")
    return math.fsum(scores) / len(scores)


def fleet_average(per_agent_scores: Sequence) -> float:
    """Unweighted mean over reporting agents.

    Items may be bare scores or ``(score, n_ag)`` pairs; the count is
    carried for logging only and does not weight the mean.
    """
    if len(per_agent_scores) == 0:
        raise DomainError("fleet_average needs at least one reporting agent")
    vals = [float(s[0]) if isinstance(s, (tuple, list)) else float(s) for s in per_agent_scores]
    return math.fsum(vals) / len(vals)


def global_attention(update: ParamVector, global_params: ParamVector) -> float:
    """Alignment of an agent update with the current global model, in [0, 1]."""
    if update.shape != global_params.shape:
        raise StructuralError(f"shape mismatch: {update.shape} vs {global_params.shape}")
    nu = float(np.linalg.norm(update.values))
    ng = float(np.linalg.norm(global_params.values))
    if nu == 0.0 or ng == 0.0:
        return 0.5
    cos = float(np.dot(update.values, global_params.values)) / (nu * ng)
    cos = max(-1.0, min(1.0, cos))
    return (1.0 + cos) / 2.0


def select_unlearn_set(fleet_avgs: Mapping[int, float], theta: float) -> set[int]:
    if theta <= 0:
        raise DomainError("theta must be positive")
    return {pid for pid, s in fleet_avgs.items() if s < theta}


def fleet_point_averages(snapshots: Iterable[AttentionSnapshot]) -> dict[int, float]:
    """Average each point's modality-averaged score over the agents holding it."""
    per_agent: dict[int, list[float]] = {}
    for snap in snapshots:
        by_point: dict[int, list[float]] = {}
        for e in snap.entries:
            by_point.setdefault(e.point_id, []).append(e.score)
        for pid, vals in by_point.items():
            per_agent.setdefault(pid, []).append(modality_average(vals))
    return {pid: fleet_average(v) for pid, v in per_agent.items()}


@dataclass(frozen=True)
class FeatureAttention:
    per_feature: np.ndarray

    def __post_init__(self):
        arr = np.array(self.per_feature, dtype=np.float64).reshape(-1)
        arr.flags.writeable = False
        object.__setattr__(self, "per_feature", arr)

    def __len__(self) -> int:
        return self.per_feature.size


def feature_attention(
    points: Sequence[DataPoint],
    scores: Sequence[float],
    params: ParamVector,
    a_max: float = 1.0,
) -> FeatureAttention:
    """Per-feature relevance derived from point scores.

    For feature ``i`` this is the attention-weighted mean of
    ``|x_i| * mean_a |w_{a,i}|`` over live points, rescaled so the most
    relevant feature sits at ``a_max``. Without live points (or with an
    all-zero model) every feature gets ``a_max``, i.e. nothing is flagged.
    """
    n = params.n_features
    if not points:
        return FeatureAttention(np.full(n, a_max))
    x = np.abs(np.stack([p.features for p in points]))
    s = np.asarray(scores, dtype=np.float64)
    if s.sum() <= 0:
        return FeatureAttention(np.zeros(n))
    mean_abs = (s @ x) / s.sum()
    contrib = mean_abs * np.mean(np.abs(params.matrix), axis=0)
    top = contrib.max()
    if top <= 0:
        return FeatureAttention(np.full(n, a_max))
    return FeatureAttention(a_max * contrib / top)


def fleet_feature_attention(per_agent: Sequence[FeatureAttention]) -> FeatureAttention:
    if not per_agent:
        raise DomainError("no feature attention reports")
    stacked = np.stack([fa.per_feature for fa in per_agent])
    return FeatureAttention(np.array([fleet_average(list(col)) for col in stacked.T]))
