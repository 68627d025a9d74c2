import csv
import logging
import os

import pytest

from framu import checkpoint
from framu.cli import main
from framu.config import parse_config
from framu.metrics import LinearQModel, activation_distance

SMALL = """\
env.n_agents = 3
env.n_features = 8
env.n_modalities = 2
env.points_per_round = 20
env.validation_size = 200
sim.steps_per_round = 60
sim.T_max = 6
"""

OUTPUTS = ("rounds.csv", "attention.csv", "unlearning_report.csv", "checkpoint.bin")


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL)
    return p


@pytest.fixture
def drift_cfg_path(tmp_path):
    p = tmp_path / "drift.cfg"
    p.write_text(SMALL + "env.drift_round = 2\n")
    return p


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_all_outputs(tmp_path, cfg_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    for name in OUTPUTS:
        assert (out / name).is_file()
    assert len(_rows(out / "rounds.csv")) == 6


def test_run_is_byte_deterministic(tmp_path, cfg_path):
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / d), "--seed", "5"]) == 0
    assert (tmp_path / "a" / "rounds.csv").read_bytes() == (tmp_path / "b" / "rounds.csv").read_bytes()
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "c"), "--seed", "6"]) == 0
    assert (tmp_path / "a" / "rounds.csv").read_bytes() != (tmp_path / "c" / "rounds.csv").read_bytes()


def test_unwritable_output_fails_cleanly(tmp_path, cfg_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", "--config", str(cfg_path), "--out", str(blocker / "out")]) != 0
    assert "error" in capsys.readouterr().err
    assert not list(tmp_path.glob("**/*.csv"))


def test_failed_write_leaves_no_partial_files(tmp_path, cfg_path, monkeypatch):
    out = tmp_path / "out"
    out.mkdir()
    real = os.fsync
    calls = {"n": 0}

    def flaky(fd):
        calls["n"] += 1
        if calls["n"] == 3:
            raise OSError(28, "No space left on device")
        return real(fd)

    monkeypatch.setattr(os, "fsync", flaky)
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 1
    assert list(out.iterdir()) == []


def test_bad_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.cfg"
    p.write_text("server.beta = 1.5\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "server.beta" in capsys.readouterr().err


def test_resume_from_interval_checkpoint(tmp_path, drift_cfg_path):
    text = drift_cfg_path.read_text() + "sim.checkpoint_every = 2\n"
    drift_cfg_path.write_text(text)
    full, resumed = tmp_path / "full", tmp_path / "resumed"
    assert main(["run", "--config", str(drift_cfg_path), "--out", str(full)]) == 0
    ck = full / "checkpoint_0004.bin"
    assert ck.is_file()
    assert main(["run", "--config", str(drift_cfg_path), "--out", str(resumed), "--resume", str(ck)]) == 0
    for name in OUTPUTS:
        assert (full / name).read_bytes() == (resumed / name).read_bytes()


def test_resume_under_other_config_refused(tmp_path, cfg_path, drift_cfg_path, capsys):
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
    ck = tmp_path / "a" / "checkpoint.bin"
    assert main(["run", "--config", str(drift_cfg_path), "--out", str(tmp_path / "b"), "--resume", str(ck)]) == 2
    assert "different config" in capsys.readouterr().err


def test_single_value_sweep_matches_run(tmp_path, cfg_path):
    sw = tmp_path / "sweep"
    assert main(["sweep", "--config", str(cfg_path), "--param", "server.beta", "--values", "0.25", "--out", str(sw)]) == 0
    direct_cfg = tmp_path / "direct.cfg"
    direct_cfg.write_text(SMALL + "server.beta = 0.25\n")
    assert main(["run", "--config", str(direct_cfg), "--out", str(tmp_path / "direct")]) == 0
    sub = sw / "server.beta=0.25"
    for name in OUTPUTS:
        assert (sub / name).read_bytes() == (tmp_path / "direct" / name).read_bytes()
    rows = _rows(sw / "sweep_summary.csv")
    assert len(rows) == 1 and rows[0]["value"] == "0.25"


def test_epsilon_sweep_summary_trend(tmp_path):
    p = tmp_path / "priv.cfg"
    p.write_text("privacy.enabled = true\n")
    out = tmp_path / "eps"
    vals = ["0.1", "0.01", "0.001"]
    assert main(["sweep", "--config", str(p), "--param", "privacy.epsilon", "--values", ",".join(vals), "--out", str(out)]) == 0
    rows = _rows(out / "sweep_summary.csv")
    assert [r["value"] for r in rows] == vals
    mse = [float(r["final_mse"]) for r in rows]
    # epsilon decreases along the list, so MSE must not decrease
    assert all(b >= a for a, b in zip(mse, mse[1:]))


def test_sweep_rejects_unknown_param(tmp_path, cfg_path):
    assert main(["sweep", "--config", str(cfg_path), "--param", "x.y", "--values", "1", "--out", str(tmp_path / "s")]) == 2


def test_report_without_unlearning_events(tmp_path, cfg_path, capsys):
    out = tmp_path / "out"
    cfg = tmp_path / "plain.cfg"
    cfg.write_text(SMALL + "forget.outdated = false\nforget.private = false\nattention.rho = 1.0\n")
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["report", "--in", str(out)]) == 0
    rows = _rows(out / "report.csv")
    assert [r["model"] for r in rows] == ["Original", "Unlearned"]
    for col in ("mse", "mae", "re"):
        assert rows[0][col] == rows[1][col]
    assert (out / "summary.txt").read_text() in capsys.readouterr().out


def test_report_warns_on_extra_columns(tmp_path, cfg_path, caplog):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    path = out / "unlearning_report.csv"
    lines = path.read_text().splitlines()
    path.write_text(lines[0] + ",comment\n" + lines[1] + ",hello\n")
    with caplog.at_level(logging.WARNING, logger="framu"):
        assert main(["report", "--in", str(out)]) == 0
    assert "comment" in caplog.text


def test_report_missing_column_is_schema_error(tmp_path, cfg_path, capsys):
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    path = out / "rounds.csv"
    rows = [line.split(",") for line in path.read_text().splitlines()]
    drop = rows[0].index("global_mae")
    path.write_text("\n".join(",".join(r[:drop] + r[drop + 1:]) for r in rows) + "\n")
    assert main(["report", "--in", str(out)]) == 2
    assert "global_mae" in capsys.readouterr().err


def test_report_requires_rounds_csv(tmp_path):
    assert main(["report", "--in", str(tmp_path)]) == 1


def test_report_ad_matches_checkpointed_models(tmp_path, drift_cfg_path):
    out = tmp_path / "out"
    assert main(["run", "--config", str(drift_cfg_path), "--out", str(out)]) == 0
    assert main(["report", "--in", str(out)]) == 0
    reported = float(_rows(out / "report.csv")[1]["ad"])
    cfg = parse_config(out / "config.cfg")
    sim = checkpoint.load(cfg, out / "checkpoint.bin")
    assert sim.events
    total, weighted = 0, 0.0
    for ev in sim.events:
        n_ev, ad_ev = 0, 0.0
        for h in ev.holders:
            pts = sim.env.forget_set(h.forget_ids).points
            ad_ev += activation_distance(LinearQModel(h.before), LinearQModel(h.after), pts) * len(pts)
            n_ev += len(pts)
        weighted += (ad_ev / n_ev) * n_ev
        total += n_ev
    assert reported == pytest.approx(weighted / total, rel=1e-12, abs=1e-15)
    assert reported > 0


def test_log_level_from_environment(tmp_path, cfg_path, monkeypatch):
    monkeypatch.setenv("FRAMU_LOG", "debug")
    assert main(["run", "--config", str(cfg_path), "--out", str(tmp_path / "o")]) == 0
    assert logging.getLogger("framu").getEffectiveLevel() == logging.DEBUG
    monkeypatch.setenv("FRAMU_LOG", "error")
    main(["report", "--in", str(tmp_path / "o")])
    assert logging.getLogger("framu").getEffectiveLevel() == logging.ERROR
