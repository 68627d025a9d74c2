import numpy as np
import pytest

from framu.config import build_config
from framu.core import DomainError, ParamVector, StructuralError
from framu.env import EnvSpec, Environment
from framu.metrics import (
    LinearQModel,
    UnlearningReport,
    activation_distance,
    combine_reports,
    evaluate,
    mae,
    mse,
    reconstruction_error,
    unlearning_event,
)
from framu.sim import Simulation

from helpers import make_point, pv


@pytest.mark.parametrize("pred, actual, m", [([1, 2], [1, 2], 0.0), ([0, 2], [0, 0], 2.0), ([3], [0], 9.0)])
def test_mse_examples(pred, actual, m):
    assert mse(pred, actual) == m


@pytest.mark.parametrize("pred, actual, m", [([1, 2], [1, 2], 0.0), ([0, 2], [0, 0], 1.0), ([-3], [0], 3.0)])
def test_mae_examples(pred, actual, m):
    assert mae(pred, actual) == m


def test_metric_shape_errors():
    with pytest.raises(StructuralError):
        mse([1, 2], [1])
    with pytest.raises(StructuralError):
        mae([], [])


def test_mae_squared_bounded_by_mse():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 50))
        p, a = rng.normal(size=(2, n)) * rng.uniform(0.01, 100)
        assert mae(p, a) ** 2 <= mse(p, a) + 1e-12 * max(1.0, mse(p, a))


def _batch(rng, n=20, f=4):
    return [make_point(i, rng.normal(size=f), target=float(rng.normal())) for i in range(n)]


def test_activation_distance_examples():
    rng = np.random.default_rng(1)
    base = rng.normal(size=(4, 3))
    pts = [make_point(i, np.r_[1.0, rng.normal(size=2)]) for i in range(5)]
    m = LinearQModel(pv(base))
    assert activation_distance(m, m, pts) == 0.0
    c = 0.75
    shifted = base.copy()
    shifted[:, 0] += c
    assert activation_distance(m, LinearQModel(pv(shifted)), pts) == pytest.approx(2 * c, abs=1e-12)
    with pytest.raises(DomainError):
        activation_distance(m, m, [])


def test_activation_distance_hand_computed():
    W = pv([[1.0, 2.0], [3.0, -1.0]])
    zeroed = pv([[1.0, 0.0], [3.0, 0.0]])
    p = make_point(1, [2.0, 3.0])
    # Q before = [8, 3], after = [2, 6]; distance = sqrt(36 + 9)
    got = activation_distance(LinearQModel(W), LinearQModel(zeroed), [p])
    assert got == pytest.approx(np.sqrt(45.0), abs=1e-12)


def test_activation_distance_ignores_gate():
    W, V = pv([[1.0, 2.0]]), pv([[0.0, 2.0]])
    p = make_point(1, [1.0, 1.0])
    assert activation_distance(LinearQModel(W, 0.3), LinearQModel(V, 0.3), [p]) == 1.0


def test_activation_distance_is_pseudometric():
    rng = np.random.default_rng(2)
    pts = _batch(rng)
    for _ in range(200):
        a, b, c = (LinearQModel(pv(rng.normal(size=(3, 4)))) for _ in range(3))
        ab = activation_distance(a, b, pts)
        assert ab == pytest.approx(activation_distance(b, a, pts), abs=1e-12)
        assert activation_distance(a, c, pts) <= ab + activation_distance(b, c, pts) + 1e-9


def test_metrics_permutation_invariant():
    rng = np.random.default_rng(3)
    pts = _batch(rng)
    perm = [pts[i] for i in rng.permutation(len(pts))]
    a, b = LinearQModel(pv(rng.normal(size=(3, 4)))), LinearQModel(pv(rng.normal(size=(3, 4))))
    assert evaluate(a, pts) == pytest.approx(evaluate(a, perm), abs=1e-12)
    assert activation_distance(a, b, pts) == pytest.approx(activation_distance(a, b, perm), abs=1e-12)
    assert reconstruction_error(a, pts) == pytest.approx(reconstruction_error(a, perm), abs=1e-12)


def test_reconstruction_error_examples():
    env = Environment(EnvSpec(noise_std=0.0))
    pts = env.gen_round(0, 1).points
    assert reconstruction_error(LinearQModel(env.oracle_params(1)), pts) == pytest.approx(0.0, abs=1e-24)
    twos = [make_point(i, [1.0, 2.0], target=2.0) for i in range(3)]
    assert reconstruction_error(LinearQModel(ParamVector.zeros(2, 2)), twos) == 4.0
    with pytest.raises(DomainError):
        reconstruction_error(LinearQModel(ParamVector.zeros(2, 2)), [])


def test_unlearning_event_pools_holders():
    rng = np.random.default_rng(4)
    val = _batch(rng, 10)
    f1, f2, r1 = _batch(rng, 3), _batch(rng, 1), _batch(rng, 3)
    g = LinearQModel(pv(rng.normal(size=(3, 4))))
    h1 = (LinearQModel(pv(rng.normal(size=(3, 4)))), LinearQModel(pv(rng.normal(size=(3, 4)))))
    h2 = (LinearQModel(pv(rng.normal(size=(3, 4)))), LinearQModel(pv(rng.normal(size=(3, 4)))))
    rep = unlearning_event(g, g, val, [(*h1, f1, r1), (*h2, f2, [])])
    assert rep.n_forget == 4
    assert rep.mse_before == rep.mse_after
    expected_ad = (activation_distance(*h1, f1) * 3 + activation_distance(*h2, f2)) / 4
    assert rep.ad_forget == pytest.approx(expected_ad, abs=1e-12)
    assert rep.ad_retain == pytest.approx(activation_distance(*h1, r1), abs=1e-12)


def test_combine_reports_weights_by_forget_size():
    a = UnlearningReport(n_forget=1, mse_after=1.0, ad_forget=3.0)
    b = UnlearningReport(n_forget=3, mse_after=2.0, ad_forget=1.0)
    c = combine_reports([a, b])
    assert c.n_forget == 4
    assert c.mse_after == pytest.approx(1.75)
    assert c.ad_forget == pytest.approx(1.5)
    fb = UnlearningReport(0, 0.5, 0.5, 0.2, 0.2)
    assert combine_reports([], fb) is fb


def test_forgetting_outdated_points_raises_their_reconstruction_error():
    cfg = build_config({"env.drift_round": 2})
    sim = Simulation(cfg)
    sim.run()
    assert sim.events
    for ev in sim.events:
        assert ev.report.re_after >= ev.report.re_before
