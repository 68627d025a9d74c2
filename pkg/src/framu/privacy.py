"""Laplace perturbation of agent-to-server updates.

``epsilon`` here is a utility/privacy trade-off knob applied per round;
there is no accounting across rounds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, ParamVector


@dataclass(frozen=True)
class PrivacyConfig:
    enabled: bool = False
    epsilon: float = 1.0
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.enabled and not self.epsilon > 0:
            raise DomainError("privacy.epsilon must be > 0 when privacy is enabled")
        if not self.clip_norm > 0:
            raise DomainError("privacy.clip_norm must be > 0")

    @property
    def scale(self) -> float:
        """Laplace scale ``b = clip_norm / epsilon``."""
        return self.clip_norm / self.epsilon


def clip(update: ParamVector, clip_norm: float) -> ParamVector:
    if not clip_norm > 0:
        raise DomainError("clip_norm must be > 0")
    norm = float(np.linalg.norm(update.values))
    if norm <= clip_norm:
        return update
    return ParamVector(update.values * (clip_norm / norm), *update.shape)


def perturb(update: ParamVector, cfg: PrivacyConfig, rng: np.random.Generator) -> ParamVector:
    """Clip ``update`` to ``cfg.clip_norm`` and add per-coordinate Laplace noise."""
    if not cfg.enabled:
        raise DomainError("perturb called with privacy disabled")
    clipped = clip(update, cfg.clip_norm)
    noise = rng.laplace(0.0, cfg.scale, size=clipped.values.size)
    return ParamVector(clipped.values + noise, *clipped.shape)
