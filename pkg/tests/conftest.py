from __future__ import annotations

import pytest

from tvp.scenario import parse_scenario

CRITERIA: dict[int, tuple[bool, str]] = {}

BASE = {
    "mesh.nx": "4",
    "mesh.ny": "4",
    "time.t_final": "0.1",
    "time.dt": "0.02",
    "material.p": "2",
    "material.eps_trunc": "0.5",
    "material.yosida_lambda": "0.05",
    "material.lame_lambda": "1",
    "material.lame_mu": "1",
    "solver.substeps": "2",
}


def scenario_text(**overrides) -> str:
    """Scenario file text; keyword ``a__b`` stands for key ``a.b``, ``None`` drops a key."""
    keys = dict(BASE)
    for k, v in overrides.items():
        key = k.replace("__", ".")
        if v is None:
            keys.pop(key, None)
        else:
            keys[key] = str(v)
    return "\n".join(f"{k} = {v}" for k, v in keys.items()) + "\n"


def make_scenario(name="test", **overrides):
    return parse_scenario(scenario_text(**overrides), name=name)


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        CRITERIA[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        passed, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
