import pytest

from framu.config import build_config

_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record a criterion's verdict as one PASS/FAIL line, then assert it."""
    lines = request.config.stash[_CRITERIA]

    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  [{detail}]"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


@pytest.fixture
def small_cfg():
    """Three agents, short rounds: fast enough for per-test simulations."""
    return build_config({
        "env.n_agents": 3,
        "env.n_features": 8,
        "env.n_modalities": 2,
        "env.points_per_round": 20,
        "env.validation_size": 200,
        "sim.steps_per_round": 60,
        "sim.T_max": 6,
    })
