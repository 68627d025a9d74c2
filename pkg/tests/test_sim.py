import numpy as np
import pytest

from framu.agent import fine_tune
from framu.config import ConfigError, build_config
from framu.core import DomainError
from framu.sim import Simulation, SimulationError, multimodal_mix, run_simulation, sweep

from helpers import pv


def test_single_round_run(small_cfg):
    logs = run_simulation(build_config({"sim.T_max": 1}, small_cfg))
    assert len(logs) == 1
    assert not logs[0].converged


def test_huge_eps_stops_after_two_rounds(small_cfg):
    logs = run_simulation(build_config({"server.eps_converge": 1e9}, small_cfg))
    assert len(logs) == 2
    assert logs[-1].converged


def test_default_config_improves():
    logs = run_simulation(build_config({}))
    assert len(logs) == 15
    assert logs[-1].global_mse < logs[0].global_mse


def test_multimodal_mix_examples():
    local, glob = pv([[1.0, 2.0, 3.0, 4.0]]), pv([[5.0, 6.0, 7.0, 8.0]])
    full = np.ones(4, bool)
    assert multimodal_mix(local, glob, 0.0, full) == local
    assert multimodal_mix(local, glob, 1.0, full) == glob
    m0 = np.array([True, True, False, False])
    assert multimodal_mix(local, glob, 0.5, m0).values.tolist() == [3.0, 4.0, 3.0, 4.0]
    with pytest.raises(DomainError):
        multimodal_mix(local, glob, 2.0, full)


def test_beta_then_lambda_is_one_affine_blend():
    rng = np.random.default_rng(0)
    full = np.ones(5, bool)
    for _ in range(200):
        w, W = pv(rng.normal(size=(2, 5))), pv(rng.normal(size=(2, 5)))
        beta, lam = rng.uniform(0, 1, 2)
        two = multimodal_mix(fine_tune(w, W, beta), W, lam, full)
        one = fine_tune(w, W, 1 - (1 - beta) * (1 - lam))
        np.testing.assert_allclose(two.values, one.values, atol=1e-12, rtol=0)


def test_mixing_identities_exact():
    rng = np.random.default_rng(1)
    full = np.ones(6, bool)
    for _ in range(100):
        w, W = pv(rng.normal(size=(3, 6))), pv(rng.normal(size=(3, 6)))
        assert np.max(np.abs(fine_tune(w, W, 0.0).values - w.values)) <= 1e-15
        assert np.max(np.abs(fine_tune(w, W, 1.0).values - W.values)) <= 1e-15
        assert np.max(np.abs(multimodal_mix(w, W, 0.0, full).values - w.values)) <= 1e-15
        assert np.max(np.abs(multimodal_mix(w, W, 1.0, full).values - W.values)) <= 1e-15


def test_runs_are_deterministic(small_cfg):
    cfg = build_config({"env.drift_round": 2}, small_cfg)
    a, b = Simulation(cfg), Simulation(cfg)
    a.run()
    b.run()
    assert a.logs == b.logs
    assert a.state.params == b.state.params
    assert [e.report for e in a.events] == [e.report for e in b.events]


def test_agent_count_invariance():
    base = {
        "env.shared_data": True,
        "env.non_iid": False,
        "env.points_per_round": 20,
        "env.validation_size": 200,
        "env.drift_round": 3,
        "sim.steps_per_round": 50,
        "sim.T_max": 6,
    }
    one = Simulation(build_config({**base, "env.n_agents": 1}))
    many = Simulation(build_config({**base, "env.n_agents": 4}))
    while not one.done:
        one.step()
        many.step()
        np.testing.assert_allclose(one.state.params.values, many.state.params.values, atol=1e-10, rtol=0)
    assert many.done


def test_unlearned_ids_never_return(small_cfg):
    sim = Simulation(build_config({"env.drift_round": 2, "sim.T_max": 8}, small_cfg))
    seen = set()
    while not sim.done:
        before = set(sim.state.tombstones)
        sim.step()
        for a in sim.agents:
            assert not (set(a.replay) & seen)
            assert not (set(a.attention.scores) & seen)
        seen |= sim.state.tombstones - before
    assert seen


def test_no_round_after_convergence(small_cfg):
    sim = Simulation(build_config({"server.eps_converge": 1e9}, small_cfg))
    sim.run()
    assert sim.logs[-1].converged
    with pytest.raises(RuntimeError):
        sim.step()


def test_events_hold_audit_trail(small_cfg):
    sim = Simulation(build_config({"env.drift_round": 2}, small_cfg))
    sim.run()
    assert sim.events
    ev = sim.events[0]
    assert ev.round == 2
    assert ev.report.n_forget == len(ev.forget_ids)
    for h in ev.holders:
        assert len(h.retain_ids) <= len(h.forget_ids)
        assert not set(h.retain_ids) & set(h.forget_ids)


def test_sweep_contracts(small_cfg):
    assert sweep(small_cfg, "privacy.epsilon", []) == []
    with pytest.raises(ConfigError):
        sweep(small_cfg, "privacy.nope", [1])
    runs = sweep(small_cfg, "attention.rho", [1.0])
    assert all(l.unlearned_count == 0 for l in runs[0][1])


def test_privacy_sweep_trend():
    base = build_config({"privacy.enabled": True})
    (_, hi), (_, lo) = sweep(base, "privacy.epsilon", [0.1, 0.001])
    assert lo[-1].global_mse >= hi[-1].global_mse


def test_numeric_blowup_reports_round(small_cfg):
    with pytest.raises(SimulationError) as info:
        run_simulation(build_config({"agent.lr": 1e300}, small_cfg))
    assert info.value.round == 1
