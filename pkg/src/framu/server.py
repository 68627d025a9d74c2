"""Central server: federated averaging, unlearning selection, convergence."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agent import UpdateReport
from .attention import (
    FeatureAttention,
    fleet_feature_attention,
    fleet_point_averages,
    global_attention,
    select_unlearn_set,
)
from .core import DomainError, ParamVector, StructuralError, weighted_sum
from .metrics import LinearQModel, evaluate

logger = logging.getLogger(__name__)


@dataclass
class GlobalState:
    """Server-owned state; ``perf_history`` only ever grows."""

    params: ParamVector
    round: int = 0
    perf_history: list[float] = field(default_factory=list)
    eps_converge: float = 1e-6
    theta_unlearn: float = 0.1
    total_points: int = 0
    gate: float = 1.0
    tombstones: set[int] = field(default_factory=set)
    feature_unlearn_round: int = -1


@dataclass(frozen=True)
class Broadcast:
    params: ParamVector
    unlearn_ids: frozenset
    round: int
    gate: float = 1.0


@dataclass(frozen=True)
class RoundEvaluation:
    mse: float
    mae: float
    perf: float
    selected_by_attention: int
    requested: int


def _check_shapes(reports: Sequence[UpdateReport], prev_global: ParamVector) -> None:
    if not reports:
        raise DomainError("aggregation needs at least one report")
    for r in reports:
        if r.params.shape != prev_global.shape:
            raise StructuralError(
                f"agent {r.agent_id} params shape {r.params.shape} != {prev_global.shape}"
            )


def aggregate(reports: Sequence[UpdateReport], prev_global: ParamVector) -> ParamVector:
    """FedAvg: ``W = sum_k (n_k / N) * params_k`` over agents holding data."""
    _check_shapes(reports, prev_global)
    live = [r for r in reports if r.n_ag > 0]
    if not live:
        return prev_global
    return weighted_sum([r.params for r in live], [r.n_ag for r in live])


def weighted_aggregate_by_alignment(
    reports: Sequence[UpdateReport], prev_global: ParamVector
) -> ParamVector:
    """FedAvg with each weight scaled by how well the update aligns with ``prev_global``."""
    _check_shapes(reports, prev_global)
    live = [r for r in reports if r.n_ag > 0]
    if not live:
        return prev_global
    align = [global_attention(r.delta, prev_global) for r in live]
    if all(a == align[0] for a in align):
        return aggregate(live, prev_global)
    weights = [r.n_ag * a for r, a in zip(live, align)]
    if sum(weights) <= 0:
        return prev_global
    return weighted_sum([r.params for r in live], weights)


def global_feature_unlearn(W: ParamVector, feat_att: FeatureAttention, theta: float) -> ParamVector:
    """Scale coefficients of low-attention features by ``attention / theta``."""
    if theta <= 0:
        raise DomainError("theta must be positive")
    if len(feat_att) != W.n_features:
        raise StructuralError("feature attention length does not match parameters")
    att = feat_att.per_feature
    low = att < theta
    if not np.any(low):
        return W
    scale = np.where(low, att / theta, 1.0)
    return ParamVector.from_matrix(W.matrix * scale[None, :])


def check_convergence(history: Sequence[float], eps: float) -> bool:
    if eps <= 0:
        raise DomainError("eps must be positive")
    if len(history) < 2:
        return False
    return abs(history[-1] - history[-2]) < eps


def fleet_gate(reports: Sequence[UpdateReport]) -> float:
    """Attention gate the global model applies to points it holds no score for.

    Training drives parameters toward ``target / score`` on gated points,
    so the consistent gate for unseen points is the score-weighted mean
    score ``sum(s^2) / sum(s)`` over all live points in the fleet.
    """
    num = 0.0
    den = 0.0
    for r in reports:
        for e in r.attention.entries:
            num += e.score * e.score
            den += e.score
    if den <= 0:
        return 1.0
    return num / den


def server_round(
    state: GlobalState,
    reports: Sequence[UpdateReport],
    validation,
    *,
    requested_ids: set[int] | frozenset = frozenset(),
    alignment_weighting: bool = False,
    feature_unlearning: bool = True,
    irrelevant_threshold: float = 0.1,
) -> tuple[GlobalState, Broadcast, RoundEvaluation]:
    """One server pass over a complete batch of reports.

    Reports are reduced in agent-id order. Unlearn commands go out at most
    once per id.
    """
    if not reports:
        raise DomainError("server_round needs at least one report")
    reports = sorted(reports, key=lambda r: r.agent_id)
    round_index = max(r.round for r in reports)

    averages = fleet_point_averages(r.attention for r in reports)
    by_attention = select_unlearn_set(averages, state.theta_unlearn)
    unlearn = (by_attention | set(requested_ids)) - state.tombstones
    state.tombstones |= unlearn

    if alignment_weighting:
        W = weighted_aggregate_by_alignment(reports, state.params)
    else:
        W = aggregate(reports, state.params)
    state.total_points = sum(r.n_ag for r in reports)

    if feature_unlearning:
        if state.feature_unlearn_round == round_index:
            raise RuntimeError(f"feature unlearning already applied in round {round_index}")
        fa = fleet_feature_attention([r.feature_attention for r in reports])
        W = global_feature_unlearn(W, fa, irrelevant_threshold)
        state.feature_unlearn_round = round_index

    state.params = W
    state.gate = fleet_gate(reports)
    state.round = round_index
    model = LinearQModel(W, state.gate)
    mse_v, mae_v = evaluate(model, validation)
    state.perf_history.append(-mse_v)

    broadcast = Broadcast(W, frozenset(unlearn), round_index, state.gate)
    evaluation = RoundEvaluation(
        mse=mse_v,
        mae=mae_v,
        perf=-mse_v,
        selected_by_attention=len(by_attention & unlearn),
        requested=len(requested_ids),
    )
    return state, broadcast, evaluation
