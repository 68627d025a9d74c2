"""Local agent: attention-gated linear Q-learning with a per-point ledger.

The Q-function is linear per action, and a point's single attention score
scales its whole feature vector::

    Q(x, a) = params[a] . (score * x)

Every TD increment is also booked against the point that produced it, so
a point's influence can later be subtracted exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol

import numpy as np

from .attention import (
    INIT_SCORE,
    AttentionSnapshot,
    AttentionTable,
    FeatureAttention,
    feature_attention,
)
from .core import DataPoint, DomainError, NumericError, ParamVector, StructuralError, Transition

logger = logging.getLogger(__name__)


class TransitionSource(Protocol):
    def gen_round(self, agent_id: int, round_index: int): ...

    def transition(self, point: DataPoint, action: int) -> Transition: ...


class GradientLedger:
    """Cumulative parameter change attributable to each data point."""

    def __init__(self, n_actions: int, n_features: int):
        self.shape = (n_actions, n_features)
        self.contributions: dict[int, np.ndarray] = {}

    def __contains__(self, point_id: int) -> bool:
        return point_id in self.contributions

    def __len__(self) -> int:
        return len(self.contributions)

    def add(self, point_id: int, action: int, increment: np.ndarray) -> None:
        entry = self.contributions.get(point_id)
        if entry is None:
            entry = np.zeros(self.shape)
            self.contributions[point_id] = entry
        entry[action] += increment

    def entry(self, point_id: int) -> ParamVector:
        c = self.contributions.get(point_id)
        if c is None:
            return ParamVector.zeros(*self.shape)
        return ParamVector.from_matrix(c)

    def pop(self, point_id: int) -> Optional[np.ndarray]:
        return self.contributions.pop(point_id, None)

    def restore(self, point_id: int, contribution: np.ndarray) -> None:
        self.contributions[point_id] = np.array(contribution, dtype=np.float64)

    def total(self) -> np.ndarray:
        acc = np.zeros(self.shape)
        for pid in sorted(self.contributions):
            acc += self.contributions[pid]
        return acc

    def digest(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for pid in sorted(self.contributions):
            h.update(int(pid).to_bytes(8, "little", signed=True))
            h.update(self.contributions[pid].astype("<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class UpdateReport:
    """What an agent sends to the server after a local round."""

    agent_id: int
    round: int
    params: ParamVector
    delta: ParamVector
    attention: AttentionSnapshot
    n_ag: int
    feature_attention: FeatureAttention
    reward: float = 0.0
    starved: bool = False
    flagged_ids: frozenset = field(default_factory=frozenset)

    @property
    def mean_attention(self) -> float:
        return self.attention.mean()


@dataclass(frozen=True)
class ForgetPolicy:
    """When flagged points are force-unlearned.

    An outdated point is due once ``round - outdated_after`` reaches
    ``outdated_threshold``; a private point once it has been held for
    ``private_after`` rounds.
    """

    outdated: bool = True
    private: bool = False
    outdated_threshold: int = 1
    private_after: int = 2

    def due(self, point: DataPoint, round_index: int) -> bool:
        f = point.flags
        if self.outdated and f.outdated_after is not None:
            if round_index - f.outdated_after >= self.outdated_threshold:
                return True
        if self.private and f.private:
            if round_index - point.created_round + 1 >= self.private_after:
                return True
        return False


class LocalAgent:
    """One federated participant.

    Holds its parameters, attention table, ledger and replay exclusively;
    the server interacts with it only through reports and broadcasts.
    """

    def __init__(
        self,
        agent_id: int,
        n_actions: int,
        n_features: int,
        *,
        lr: float = 0.01,
        gamma: float = 0.9,
        epsilon_greedy: float = 0.1,
        epsilon_decay: float = 0.99,
        epsilon_floor: float = 0.01,
        eta: float = 0.05,
        rho: float = 0.95,
        a_max: float = 1.0,
        seed: int = 0,
        initial_params: Optional[ParamVector] = None,
        local_unlearning: bool = False,
        local_delta: float = 0.05,
        modality_mask: Optional[np.ndarray] = None,
    ):
        if not 0.0 <= gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")
        if not 0.0 <= epsilon_greedy <= 1.0:
            raise DomainError("epsilon_greedy must lie in [0, 1]")
        if lr <= 0:
            raise DomainError("lr must be positive")
        self.agent_id = agent_id
        self.n_actions = n_actions
        self.n_features = n_features
        self.lr = lr
        self.gamma = gamma
        self.epsilon_greedy = epsilon_greedy
        self.epsilon_decay = epsilon_decay
        self.epsilon_floor = epsilon_floor
        self.local_unlearning = local_unlearning
        self.local_delta = local_delta
        if initial_params is None:
            initial_params = ParamVector.zeros(n_actions, n_features)
        if initial_params.shape != (n_actions, n_features):
            raise StructuralError("initial_params has the wrong shape")
        self.initial_params = initial_params
        self.params = initial_params.copy_matrix()
        self.attention = AttentionTable(eta, rho, a_max)
        self.ledger = GradientLedger(n_actions, n_features)
        self.replay: dict[int, DataPoint] = {}
        self.rng = np.random.default_rng(seed)
        self.modality_mask = (
            np.ones(n_features, dtype=bool) if modality_mask is None else np.asarray(modality_mask, bool)
        )
        self.unknown_unlearn = 0

    @property
    def n_ag(self) -> int:
        return len(self.replay)

    def param_vector(self) -> ParamVector:
        return ParamVector.from_matrix(self.params)

    def set_params(self, params: ParamVector) -> None:
        if params.shape != self.params.shape:
            raise StructuralError("parameter shape mismatch")
        self.params = params.copy_matrix()

    def ingest(self, points: Iterable[DataPoint]) -> None:
        pv = None
        for p in points:
            if p.id in self.replay:
                continue
            if p.n_features != self.n_features:
                raise StructuralError("point feature length does not match the agent")
            self.replay[p.id] = p
            self.attention.add(p, pv)

    def score(self, point: DataPoint) -> float:
        return self.attention.get(point.id, INIT_SCORE)

    def q_values(self, point: DataPoint) -> np.ndarray:
        return self.params @ (self.score(point) * point.features)

    def mean_attention(self) -> float:
        if not self.attention.scores:
            return 0.0
        return float(np.mean(list(self.attention.scores.values())))

    def feature_attention(self) -> FeatureAttention:
        pts = list(self.replay.values())
        scores = [self.attention.scores[p.id] for p in pts]
        return feature_attention(pts, scores, self.param_vector(), self.attention.a_max)


def q_value(point: DataPoint, action: int, params: ParamVector, attention_score: float) -> float:
    if not 0 <= action < params.n_actions:
        raise DomainError(f"action {action} out of range")
    return float(params.row(action) @ (attention_score * point.features))


def select_action(point: DataPoint, agent: LocalAgent) -> int:
    """Epsilon-greedy over the agent's Q-values; ties go to the lowest index."""
    if agent.rng.random() < agent.epsilon_greedy:
        return int(agent.rng.integers(agent.n_actions))
    return int(np.argmax(agent.q_values(point)))


def td_error(t: Transition, agent: LocalAgent) -> float:
    q_sa = float(agent.q_values(t.state_point)[t.action])
    if t.terminal:
        v_next = 0.0
    else:
        v_next = float(np.max(agent.q_values(t.next_point)))
    return t.reward + agent.gamma * v_next - q_sa


def td_update(agent: LocalAgent, t: Transition, delta: float) -> LocalAgent:
    """Apply ``params[a] += lr * delta * (score * x)`` and book it in the ledger."""
    if not np.isfinite(delta):
        raise NumericError(f"non-finite TD error at agent {agent.agent_id}")
    if delta == 0.0:
        return agent
    pid = t.state_point.id
    inc = (agent.lr * delta * agent.score(t.state_point)) * t.state_point.features
    row = agent.params[t.action] + inc
    if not np.all(np.isfinite(row)):
        raise NumericError(f"non-finite parameters at agent {agent.agent_id}")
    agent.params[t.action] = row
    agent.ledger.add(pid, t.action, inc)
    if pid in agent.attention:
        agent.attention.bump(pid, delta)
    return agent


def local_unlearn(agent: LocalAgent, ids: Iterable[int]) -> list[int]:
    """Subtract each point's ledger entry and forget the point.

    Returns the ids that were actually held; unknown ids are counted in
    ``agent.unknown_unlearn`` and otherwise ignored.
    """
    removed = []
    for pid in sorted(set(ids)):
        if pid not in agent.replay and pid not in agent.ledger and pid not in agent.attention:
            agent.unknown_unlearn += 1
            continue
        contribution = agent.ledger.pop(pid)
        if contribution is not None:
            agent.params -= contribution
        agent.replay.pop(pid, None)
        agent.attention.remove(pid)
        removed.append(pid)
    return removed


def fine_tune(local: ParamVector, global_model: ParamVector, beta: float) -> ParamVector:
    """Blend ``beta * global + (1 - beta) * local``."""
    if not 0.0 <= beta <= 1.0:
        raise DomainError("beta must lie in [0, 1]")
    if local.shape != global_model.shape:
        raise StructuralError("shape mismatch")
    return ParamVector(beta * global_model.values + (1.0 - beta) * local.values, *local.shape)


def run_local_round(
    agent: LocalAgent,
    env_stream: TransitionSource,
    steps: int,
    round_index: int,
    forget_policy: Optional[ForgetPolicy] = None,
    ingest: bool = True,
) -> tuple[LocalAgent, UpdateReport]:
    """Decay attention, take in this round's data, then run ``steps`` TD updates.

    Training points are drawn uniformly (with replacement) from the live
    replay using the agent's own generator.
    """
    if steps < 0:
        raise DomainError("steps must be >= 0")
    before = agent.param_vector()
    agent.attention.decay()
    if ingest:
        agent.ingest(env_stream.gen_round(agent.agent_id, round_index).points)
    if agent.local_unlearning:
        low = [pid for pid, s in agent.attention.scores.items() if s < agent.local_delta]
        if low:
            local_unlearn(agent, low)

    starved = steps > 0 and agent.n_ag == 0
    reward_sum = 0.0
    episodes = 0
    if not starved and steps > 0:
        live = list(agent.replay.values())
        picks = agent.rng.integers(0, len(live), size=steps)
        for i in picks:
            point = live[i]
            action = select_action(point, agent)
            t = env_stream.transition(point, action)
            delta = td_error(t, agent)
            td_update(agent, t, delta)
            reward_sum += agent.gamma ** t.position * t.reward
            if t.position == 0:
                episodes += 1
    agent.epsilon_greedy = max(agent.epsilon_floor, agent.epsilon_greedy * agent.epsilon_decay)

    after = agent.param_vector()
    flagged = frozenset()
    if forget_policy is not None:
        flagged = frozenset(
            pid for pid, p in agent.replay.items() if forget_policy.due(p, round_index)
        )
    report = UpdateReport(
        agent_id=agent.agent_id,
        round=round_index,
        params=after,
        delta=ParamVector(after.values - before.values, *after.shape),
        attention=agent.attention.snapshot(agent.agent_id),
        n_ag=agent.n_ag,
        feature_attention=agent.feature_attention(),
        reward=reward_sum / max(episodes, 1),
        starved=starved,
        flagged_ids=flagged,
    )
    if starved:
        logger.warning("agent %d starved in round %d", agent.agent_id, round_index)
    return agent, report
