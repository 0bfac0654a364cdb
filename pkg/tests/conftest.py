from __future__ import annotations

import json
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from windnav import KKTIterate, WindField, load_scenario, solve, straight_line

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def configs_dir() -> Path:
    return CONFIGS


@pytest.fixture
def vortex_field() -> WindField:
    return WindField.gaussian_vortex((0.5, 0.0), 1.0, 0.25)


@pytest.fixture(scope="session")
def vortex_scenario():
    return load_scenario(CONFIGS / "vortex.json")


@pytest.fixture(scope="session")
def vortex_run(vortex_scenario):
    sc = vortex_scenario
    start = KKTIterate.from_state(straight_line(sc.x_o, sc.x_d, sc.N))
    return solve(start, sc.wind, sc.vbar, sc.solver, sc.L_tilde)


@pytest.fixture
def write_config(tmp_path):
    def _write(data: dict, name: str = "cfg.json") -> Path:
        p = tmp_path / name
        p.write_text(json.dumps(data), encoding="utf-8")
        return p

    return _write


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS, summary_lines

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in summary_lines():
        terminalreporter.write_line(line)
