import numpy as np
import pytest

from framu import checkpoint
from framu.checkpoint import CheckpointError
from framu.config import build_config
from framu.io import rounds_csv
from framu.sim import Simulation


def _cfg(small_cfg):
    return build_config({"env.drift_round": 2, "sim.T_max": 7}, small_cfg)


@pytest.mark.parametrize("stop", [0, 1, 2, 4, 6])
def test_resume_reproduces_uninterrupted_run(small_cfg, stop):
    cfg = _cfg(small_cfg)
    full = Simulation(cfg)
    full.run()
    part = Simulation(cfg)
    for _ in range(stop):
        part.step()
    resumed = checkpoint.restore(cfg, checkpoint.dumps(part))
    resumed.run()
    n = len(full.agents)
    assert rounds_csv(resumed.logs, n) == rounds_csv(full.logs, n)
    assert checkpoint.dumps(resumed) == checkpoint.dumps(full)


def test_container_layout(small_cfg):
    sim = Simulation(_cfg(small_cfg))
    sim.step()
    data = checkpoint.dumps(sim)
    assert data[:8] == b"FRAMUCKP"
    assert int.from_bytes(data[8:12], "little") == checkpoint.FORMAT_VERSION
    assert int.from_bytes(data[12:16], "little") == 1
    rnd, _, sections = checkpoint.decode(data)
    assert rnd == 1
    np.testing.assert_array_equal(sections["server.params"], sim.state.params.values)
    assert sections["agent.0.meta"]["ledger_digest"] == sim.agents[0].ledger.digest()


def test_config_mismatch_refused(small_cfg):
    sim = Simulation(_cfg(small_cfg))
    sim.step()
    other = build_config({"sim.seed": 7}, _cfg(small_cfg))
    with pytest.raises(CheckpointError, match="different config"):
        checkpoint.restore(other, checkpoint.dumps(sim))


def test_corrupt_containers_refused(small_cfg):
    sim = Simulation(_cfg(small_cfg))
    sim.step()
    data = checkpoint.dumps(sim)
    with pytest.raises(CheckpointError):
        checkpoint.decode(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError):
        checkpoint.decode(data[:-5])
    with pytest.raises(CheckpointError):
        checkpoint.decode(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointError):
        checkpoint.decode(data + b"\0")


def test_save_and_load_file(tmp_path, small_cfg):
    cfg = _cfg(small_cfg)
    sim = Simulation(cfg)
    sim.step()
    path = tmp_path / "ck.bin"
    checkpoint.save(sim, path)
    back = checkpoint.load(cfg, path)
    assert back.round == 1 and back.logs == sim.logs
