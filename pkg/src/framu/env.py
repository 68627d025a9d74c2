"""Synthetic federated environments with a linear ground truth.

Every draw is keyed by ``(seed, stream, agent, round)`` so any batch can be
regenerated on demand; the environment archive is therefore just a cache
over a pure function.

Point ids encode their origin: ``((data_agent + 1) * ROUND_SPAN + round) *
POINT_SPAN + index``. Validation points use negative ids.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .core import (
    DataPoint,
    DomainError,
    ParamVector,
    PointFlags,
    StructuralError,
    Transition,
    partition_modalities,
)

ROUND_SPAN = 100_000
POINT_SPAN = 100_000

_TAG_THETA = 1
_TAG_OFFSET = 2
_TAG_ROUND = 3
_TAG_VALID = 4


@dataclass(frozen=True)
class EnvSpec:
    """Synthetic environment description.

    ``drift_round`` of ``None`` disables drift. ``episode_length`` 1 gives
    contextual-bandit episodes; larger values chain consecutive points of a
    batch into episodes. ``modality_subscription`` is ``"all"`` or
    ``"round_robin"`` (agent ``k`` only observes modality ``k mod m``).
    """

    n_features: int = 20
    n_actions: int = 4
    n_modalities: int = 4
    n_agents: int = 5
    noise_std: float = 0.1
    drift_round: Optional[int] = None
    drift_features: tuple[int, ...] = (0, 1, 2)
    private_fraction: float = 0.0
    irrelevant_features: tuple[int, ...] = ()
    points_per_round: int = 50
    seed: int = 42
    non_iid: bool = True
    shared_data: bool = False
    episode_length: int = 1
    modality_subscription: str = "all"
    validation_size: int = 1000
    offset_scale: float = 0.5
    true_params: Optional[ParamVector] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ("n_features", "n_actions", "n_modalities", "n_agents", "episode_length"):
            if getattr(self, name) < 1:
                raise DomainError(f"env.{name} must be >= 1")
        if self.n_modalities > self.n_features:
            raise DomainError("env.n_modalities must not exceed env.n_features")
        if self.noise_std < 0:
            raise DomainError("env.noise_std must be >= 0")
        if not 0.0 <= self.private_fraction <= 1.0:
            raise DomainError("env.private_fraction must lie in [0, 1]")
        if self.points_per_round < 0 or self.points_per_round >= POINT_SPAN:
            raise DomainError("env.points_per_round out of range")
        if self.offset_scale < 0:
            raise DomainError("env.offset_scale must be >= 0")
        if self.validation_size < 1:
            raise DomainError("env.validation_size must be >= 1")
        if self.drift_round is not None and self.drift_round < 1:
            raise DomainError("env.drift_round must be >= 1")
        for idx in tuple(self.drift_features) + tuple(self.irrelevant_features):
            if not 0 <= idx < self.n_features:
                raise DomainError(f"feature index {idx} outside [0, {self.n_features})")
        if self.modality_subscription not in ("all", "round_robin"):
            raise DomainError("env.modality_subscription must be 'all' or 'round_robin'")
        if self.true_params is not None:
            if self.true_params.shape != (self.n_actions, self.n_features):
                raise StructuralError("env.true_params has the wrong shape")
            irr = list(self.irrelevant_features)
            if irr and np.any(self.true_params.matrix[:, irr] != 0):
                raise DomainError("true_params must be zero on irrelevant features")


@dataclass(frozen=True)
class StreamBatch:
    points: tuple[DataPoint, ...]
    round: int
    transitions: tuple[Transition, ...] = ()

    def __len__(self) -> int:
        return len(self.points)

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.points]


def make_point_id(data_agent: int, round_index: int, index: int) -> int:
    return ((data_agent + 1) * ROUND_SPAN + round_index) * POINT_SPAN + index


def decode_point_id(point_id: int) -> tuple[int, int, int]:
    """Inverse of ``make_point_id``: ``(data_agent, round, index)``."""
    if point_id < 0:
        raise KeyError(point_id)
    rest, index = divmod(point_id, POINT_SPAN)
    agent_plus, round_index = divmod(rest, ROUND_SPAN)
    return agent_plus - 1, round_index, index


class Environment:
    """Generator plus archive for one ``EnvSpec``."""

    def __init__(self, spec: EnvSpec):
        self.spec = spec
        self.modalities = partition_modalities(spec.n_features, spec.n_modalities)
        self.theta = self._true_params()
        self._batches: dict[tuple[int, int], StreamBatch] = {}
        self._by_id: dict[int, DataPoint] = {}
        self._valid: dict[bool, StreamBatch] = {}

    # -- ground truth -------------------------------------------------
    def _rng(self, *key: int) -> np.random.Generator:
        return np.random.default_rng([self.spec.seed, *key])

    def _true_params(self) -> np.ndarray:
        s = self.spec
        if s.true_params is not None:
            return s.true_params.copy_matrix()
        theta = self._rng(_TAG_THETA).normal(0.0, 1.0, (s.n_actions, s.n_features))
        theta /= np.sqrt(s.n_features)
        theta[:, list(s.irrelevant_features)] = 0.0
        return theta

    def drifted(self, round_index: int) -> bool:
        d = self.spec.drift_round
        return d is not None and round_index >= d

    def oracle_params(self, round_index: int) -> ParamVector:
        """Ground-truth coefficients of the regime active at ``round_index``."""
        theta = self.theta.copy()
        if self.drifted(round_index):
            theta[:, list(self.spec.drift_features)] *= -1.0
        return ParamVector.from_matrix(theta)

    def data_agent(self, agent_id: int) -> int:
        return 0 if self.spec.shared_data else agent_id

    def agent_offsets(self, agent_id: int) -> np.ndarray:
        s = self.spec
        if not s.non_iid:
            return np.zeros(s.n_features)
        return self._rng(_TAG_OFFSET, self.data_agent(agent_id)).uniform(-s.offset_scale, s.offset_scale, s.n_features)

    def subscribed_modalities(self, agent_id: int) -> tuple[int, ...]:
        s = self.spec
        if s.modality_subscription == "all":
            return tuple(range(s.n_modalities))
        return (self.data_agent(agent_id) % s.n_modalities,)

    def modality_mask(self, agent_id: int) -> np.ndarray:
        mask = np.zeros(self.spec.n_features, dtype=bool)
        for m in self.subscribed_modalities(agent_id):
            d = self.modalities[m]
            mask[d.start:d.stop] = True
        return mask

    # -- generation ---------------------------------------------------
    def _draw(self, rng: np.random.Generator, n: int, offsets: np.ndarray, mask: np.ndarray, theta: np.ndarray):
        s = self.spec
        x = offsets + rng.standard_normal((n, s.n_features))
        x[:, ~mask] = 0.0
        noise = rng.normal(0.0, 1.0, (n, s.n_actions)) * s.noise_std
        rewards = x @ theta.T + noise
        best = np.argmax(x @ theta.T, axis=1)
        targets = rewards[np.arange(n), best]
        return x, rewards, targets

    def gen_round(self, agent_id: int, round_index: int) -> StreamBatch:
        if round_index < 1:
            raise DomainError("round index must be >= 1")
        data_agent = self.data_agent(agent_id)
        key = (data_agent, round_index)
        cached = self._batches.get(key)
        if cached is not None:
            return cached
        s = self.spec
        rng = self._rng(_TAG_ROUND, data_agent, round_index)
        theta = self.oracle_params(round_index).matrix
        n = s.points_per_round
        x, rewards, targets = self._draw(
            rng, n, self.agent_offsets(agent_id), self.modality_mask(agent_id), theta
        )
        private = rng.random(n) < s.private_fraction
        subscribed = self.subscribed_modalities(agent_id)
        modality = rng.integers(0, len(subscribed), n)
        outdated_after = None
        if s.drift_round is not None and round_index < s.drift_round:
            outdated_after = s.drift_round - 1
        points = tuple(
            DataPoint(
                id=make_point_id(data_agent, round_index, i),
                modality=int(subscribed[modality[i]]),
                features=x[i],
                target=float(targets[i]),
                flags=PointFlags(outdated_after=outdated_after, private=bool(private[i])),
                created_round=round_index,
                action_rewards=rewards[i],
                agent_id=data_agent,
            )
            for i in range(n)
        )
        batch = StreamBatch(points, round_index)
        self._batches[key] = batch
        for p in points:
            self._by_id[p.id] = p
        return batch

    def validation_pool(self, round_index: int) -> StreamBatch:
        """Held-out pool under the regime active at ``round_index``.

        Features and noise are identical for every regime; only the targets
        follow the drifted coefficients.
        """
        drifted = self.drifted(round_index)
        cached = self._valid.get(drifted)
        if cached is not None:
            return cached
        s = self.spec
        rng = self._rng(_TAG_VALID)
        n = s.validation_size
        owner = rng.integers(0, s.n_agents, n)
        x = rng.standard_normal((n, s.n_features))
        for k in range(s.n_agents):
            rows = owner == k
            x[rows] += self.agent_offsets(k)
            x[np.ix_(rows, ~self.modality_mask(k))] = 0.0
        noise = rng.normal(0.0, 1.0, (n, s.n_actions)) * s.noise_std
        theta = self.oracle_params(round_index).matrix
        clean = x @ theta.T
        rewards = clean + noise
        best = np.argmax(clean, axis=1)
        targets = rewards[np.arange(n), best]
        points = tuple(
            DataPoint(
                id=-(i + 1),
                modality=0,
                features=x[i],
                target=float(targets[i]),
                created_round=0,
                action_rewards=rewards[i],
                agent_id=int(owner[i]),
            )
            for i in range(n)
        )
        pool = StreamBatch(points, round_index)
        self._valid[drifted] = pool
        return pool

    # -- archive ------------------------------------------------------
    def lookup(self, point_id: int) -> DataPoint:
        p = self._by_id.get(point_id)
        if p is not None:
            return p
        try:
            data_agent, round_index, index = decode_point_id(point_id)
        except KeyError:
            raise KeyError(f"unknown point id {point_id}") from None
        if (
            not 0 <= data_agent < self.spec.n_agents
            or round_index < 1
            or index >= self.spec.points_per_round
        ):
            raise KeyError(f"unknown point id {point_id}")
        self.gen_round(data_agent, round_index)
        return self._by_id[point_id]

    def forget_set(self, unlearn_ids: Iterable[int]) -> StreamBatch:
        ids = sorted(set(unlearn_ids))
        return StreamBatch(tuple(self.lookup(i) for i in ids), 0)

    def next_point(self, point: DataPoint) -> Optional[DataPoint]:
        """Successor of ``point`` within its episode, or None at episode end."""
        L = self.spec.episode_length
        if L <= 1 or point.id < 0:
            return None
        _, _, index = decode_point_id(point.id)
        if index % L == L - 1 or index + 1 >= self.spec.points_per_round:
            return None
        return self.lookup(point.id + 1)

    def position(self, point: DataPoint) -> int:
        if point.id < 0:
            return 0
        return decode_point_id(point.id)[2] % self.spec.episode_length

    def transition(self, point: DataPoint, action: int) -> Transition:
        if not 0 <= action < self.spec.n_actions:
            raise DomainError(f"action {action} out of range")
        return Transition(
            state_point=point,
            action=action,
            reward=float(point.action_rewards[action]),
            next_point=self.next_point(point),
            position=self.position(point),
        )

    def archive_csv(self) -> str:
        """Every point generated so far, ordered by id."""
        n = self.spec.n_features
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["point_id", "agent_id", "modality", "round", "private", "irrelevant", "outdated_after"]
            + [f"f{i}" for i in range(n)]
            + ["target"]
        )
        for pid in sorted(self._by_id):
            p = self._by_id[pid]
            w.writerow(
                [p.id, p.agent_id, p.modality, p.created_round, int(p.flags.private),
                 int(p.flags.irrelevant),
                 "" if p.flags.outdated_after is None else p.flags.outdated_after]
                + [repr(float(v)) for v in p.features]
                + [repr(p.target)]
            )
        return buf.getvalue()


def gen_round(spec: EnvSpec, agent_id: int, round_index: int) -> StreamBatch:
    return Environment(spec).gen_round(agent_id, round_index)


def validation_pool(spec: EnvSpec, round_index: int) -> StreamBatch:
    return Environment(spec).validation_pool(round_index)


def forget_set(spec: EnvSpec, unlearn_ids: Iterable[int]) -> StreamBatch:
    return Environment(spec).forget_set(unlearn_ids)


def oracle_predictions(theta: ParamVector, points: Sequence[DataPoint]) -> np.ndarray:
    """Greedy value ``max_a theta_a . x`` for each point."""
    if not points:
        return np.zeros(0)
    x = np.stack([p.features for p in points])
    return np.max(x @ theta.matrix.T, axis=1)
