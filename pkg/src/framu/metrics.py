"""Learning and unlearning metrics: MSE, MAE, reconstruction error, activation distance."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .core import DataPoint, DomainError, ParamVector, StructuralError


@dataclass(frozen=True)
class LinearQModel:
    """Predictor built from a parameter block and one attention gate.

    The gate stands in for the attention of a point the model has no score
    for; activation distance always evaluates with gate 1.
    """

    params: ParamVector
    gate: float = 1.0

    def q_vectors(self, points: Sequence[DataPoint], gate: float | None = None) -> np.ndarray:
        g = self.gate if gate is None else gate
        if not points:
            return np.zeros((0, self.params.n_actions))
        x = np.stack([p.features for p in points])
        return (g * x) @ self.params.matrix.T

    def greedy_values(self, points: Sequence[DataPoint]) -> np.ndarray:
        return np.max(self.q_vectors(points), axis=1)


def _pair(pred, actual) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64).reshape(-1)
    a = np.asarray(actual, dtype=np.float64).reshape(-1)
    if p.size != a.size:
        raise StructuralError(f"length mismatch: {p.size} vs {a.size}")
    if p.size == 0:
        raise StructuralError("metrics need at least one value")
    return p, a


def mse(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.mean((p - a) ** 2))


def mae(pred, actual) -> float:
    p, a = _pair(pred, actual)
    return float(np.mean(np.abs(p - a)))


def targets(points: Sequence[DataPoint]) -> np.ndarray:
    return np.array([p.target for p in points], dtype=np.float64)


def activation_distance(before: LinearQModel, after: LinearQModel, points: Sequence[DataPoint]) -> float:
    """Mean L2 distance between per-action Q-vectors of two models."""
    if len(points) == 0:
        raise DomainError("activation distance over an empty batch")
    qa = before.q_vectors(points, gate=1.0)
    qb = after.q_vectors(points, gate=1.0)
    return float(np.mean(np.sqrt(np.sum((qa - qb) ** 2, axis=1))))


def reconstruction_error(model: LinearQModel, forget: Sequence[DataPoint]) -> float:
    """Prediction MSE of ``model`` on the stored targets of forgotten points.

    Higher after unlearning means the forgotten targets are reproduced less
    well.
    """
    if len(forget) == 0:
        raise DomainError("reconstruction error over an empty forget set")
    return mse(model.greedy_values(forget), targets(forget))


def evaluate(model: LinearQModel, points: Sequence[DataPoint]) -> tuple[float, float]:
    """``(mse, mae)`` of greedy-value predictions against point targets."""
    pred = model.greedy_values(points)
    y = targets(points)
    return mse(pred, y), mae(pred, y)


@dataclass(frozen=True)
class UnlearningReport:
    n_forget: int = 0
    mse_before: float = 0.0
    mse_after: float = 0.0
    mae_before: float = 0.0
    mae_after: float = 0.0
    re_before: float = 0.0
    re_after: float = 0.0
    re_retain: float = 0.0
    ad_forget: float = 0.0
    ad_retain: float = 0.0

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def as_dict(self) -> dict:
        return asdict(self)


def unlearning_event(
    global_before: LinearQModel,
    global_after: LinearQModel,
    validation: Sequence[DataPoint],
    holders: Sequence[tuple[LinearQModel, LinearQModel, Sequence[DataPoint], Sequence[DataPoint]]],
) -> UnlearningReport:
    """Metrics of one unlearning step.

    Validation MSE/MAE compare the global models around the step. The
    point-level metrics (RE, AD) are pooled over ``holders``: one
    ``(before, after, forget, retain)`` tuple per agent, evaluated on the
    model of the agent that held those points.
    """
    mse_b, mae_b = evaluate(global_before, validation)
    mse_a, mae_a = evaluate(global_after, validation)
    forget_pred_b, forget_pred_a, forget_y = [], [], []
    retain_pred, retain_y = [], []
    ad_f, ad_r = [], []
    for before, after, forget, retain in holders:
        if forget:
            forget_pred_b.append(before.greedy_values(forget))
            forget_pred_a.append(after.greedy_values(forget))
            forget_y.append(targets(forget))
            ad_f.append(activation_distance(before, after, forget) * len(forget))
        if retain:
            retain_pred.append(after.greedy_values(retain))
            retain_y.append(targets(retain))
            ad_r.append(activation_distance(before, after, retain) * len(retain))
    n_f = sum(len(h[2]) for h in holders)
    n_r = sum(len(h[3]) for h in holders)
    if n_f == 0:
        raise DomainError("unlearning event without forgotten points")
    yf = np.concatenate(forget_y)
    return UnlearningReport(
        n_forget=n_f,
        mse_before=mse_b,
        mse_after=mse_a,
        mae_before=mae_b,
        mae_after=mae_a,
        re_before=mse(np.concatenate(forget_pred_b), yf),
        re_after=mse(np.concatenate(forget_pred_a), yf),
        re_retain=mse(np.concatenate(retain_pred), np.concatenate(retain_y)) if n_r else 0.0,
        ad_forget=float(sum(ad_f) / n_f),
        ad_retain=float(sum(ad_r) / n_r) if n_r else 0.0,
    )


def combine_reports(events: Sequence[UnlearningReport], fallback: UnlearningReport | None = None) -> UnlearningReport:
    """Weight every event metric by its forget-set size."""
    events = [e for e in events if e.n_forget > 0]
    if not events:
        return fallback if fallback is not None else UnlearningReport()
    total = sum(e.n_forget for e in events)
    merged = {"n_forget": total}
    for name in UnlearningReport.columns():
        if name == "n_forget":
            continue
        merged[name] = float(sum(getattr(e, name) * e.n_forget for e in events) / total)
    return UnlearningReport(**merged)
