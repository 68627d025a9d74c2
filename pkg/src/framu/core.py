"""Shared numeric types and vector kernels.

Model parameters live in a flat float64 array laid out action-major, so
row ``a`` of the ``(n_actions, n_features)`` view holds the linear
coefficients of action ``a``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class StructuralError(ValueError):
    """Inputs have incompatible shapes or lengths."""


class DomainError(ValueError):
    """Inputs are outside the mathematical domain of an operation."""


class NumericError(ArithmeticError):
    """A computation produced a non-finite value."""


@dataclass(frozen=True)
class ParamVector:
    """Immutable dense parameter block of shape ``(n_actions, n_features)``."""

    values: np.ndarray
    n_actions: int
    n_features: int

    def __post_init__(self):
        if self.n_actions < 1 or self.n_features < 1:
            raise StructuralError("n_actions and n_features must be positive")
        arr = np.array(self.values, dtype=np.float64).reshape(-1)
        if arr.size != self.n_actions * self.n_features:
            raise StructuralError(
                f"expected {self.n_actions * self.n_features} values, got {arr.size}"
            )
        if not np.all(np.isfinite(arr)):
            raise NumericError("parameter vector contains non-finite entries")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @classmethod
    def zeros(cls, n_actions: int, n_features: int) -> "ParamVector":
        return cls(np.zeros(n_actions * n_features), n_actions, n_features)

    @classmethod
    def from_matrix(cls, matrix) -> "ParamVector":
        m = np.asarray(matrix, dtype=np.float64)
        if m.ndim != 2:
            raise StructuralError("matrix must be two-dimensional")
        return cls(m.reshape(-1), m.shape[0], m.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_actions, self.n_features)

    @property
    def matrix(self) -> np.ndarray:
        """Read-only ``(n_actions, n_features)`` view."""
        return self.values.reshape(self.n_actions, self.n_features)

    def row(self, action: int) -> np.ndarray:
        return self.matrix[action]

    def copy_matrix(self) -> np.ndarray:
        """Writable copy of the matrix view."""
        return self.matrix.copy()

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True)
class PointFlags:
    outdated_after: Optional[int] = None
    private: bool = False
    irrelevant: bool = False


@dataclass(frozen=True)
class DataPoint:
    """One observation held by an agent.

    ``action_rewards`` stores the frozen noisy reward of every action so a
    point can be replayed deterministically; ``target`` is the reward of the
    regime-optimal action and is what evaluation metrics compare against.
    """

    id: int
    modality: int
    features: np.ndarray
    target: float
    flags: PointFlags = field(default_factory=PointFlags)
    created_round: int = 0
    action_rewards: Optional[np.ndarray] = None
    agent_id: int = 0

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64).reshape(-1)
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        if self.action_rewards is not None:
            rewards = np.array(self.action_rewards, dtype=np.float64).reshape(-1)
            rewards.flags.writeable = False
            object.__setattr__(self, "action_rewards", rewards)

    @property
    def n_features(self) -> int:
        return self.features.size

    __hash__ = object.__hash__


@dataclass(frozen=True)
class ModalityDescriptor:
    index: int
    start: int
    stop: int

    @property
    def feature_range(self) -> range:
        return range(self.start, self.stop)


def partition_modalities(n_features: int, n_modalities: int) -> list[ModalityDescriptor]:
    """Split ``[0, n_features)`` into ``n_modalities`` contiguous blocks.

    Earlier blocks absorb the remainder when the split is uneven.
    """
    if n_modalities < 1 or n_modalities > n_features:
        raise DomainError("need 1 <= n_modalities <= n_features")
    base, extra = divmod(n_features, n_modalities)
    out = []
    start = 0
    for m in range(n_modalities):
        stop = start + base + (1 if m < extra else 0)
        out.append(ModalityDescriptor(m, start, stop))
        start = stop
    return out


def check_partition(modalities: Sequence[ModalityDescriptor], n_features: int) -> None:
    covered = sorted((d.start, d.stop) for d in modalities)
    pos = 0
    for start, stop in covered:
        if start != pos or stop <= start:
            raise StructuralError("modality ranges do not partition the feature space")
        pos = stop
    if pos != n_features:
        raise StructuralError("modality ranges do not partition the feature space")


def weighted_sum(vectors: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """Normalized weighted combination ``sum(w_k / sum(w) * v_k)``.

    Accumulates left to right in input order so repeated runs are
    bit-identical.
    """
    if len(vectors) == 0 or len(vectors) != len(weights):
        raise StructuralError("vectors and weights must be non-empty and equal length")
    shape = vectors[0].shape
    for v in vectors:
        if v.shape != shape:
            raise StructuralError(f"shape mismatch: {v.shape} vs {shape}")
    w = [float(x) for x in weights]
    if any(x < 0 or not math.isfinite(x) for x in w):
        raise DomainError("weights must be finite and non-negative")
    total = 0.0
    for x in w:
        total += x
    if total <= 0.0:
        raise DomainError("weights sum to zero")
    acc = np.zeros(shape[0] * shape[1])
    for v, x in zip(vectors, w):
        if x == 0.0:
            continue
        acc = acc + (x / total) * v.values
    return ParamVector(acc, *shape)


def l2_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise StructuralError(f"length mismatch: {a.size} vs {b.size}")
    return float(np.sqrt(np.sum((a - b) ** 2)))


@dataclass(frozen=True)
class Transition:
    """One step ``(s, a, r, s')``; ``next_point`` is None at episode ends."""

    state_point: DataPoint
    action: int
    reward: float
    next_point: Optional[DataPoint] = None
    position: int = 0

    @property
    def terminal(self) -> bool:
        return self.next_point is None
