from pathlib import Path

import pytest
from hypothesis import settings

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
CONFIGS = ROOT / "configs"

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

TWO_CARS = """
param time = uniform(0, 1440)
param weather = choice("CLEAR", "RAIN", "SNOW")
ego = car(x: 0, y: 0, heading: 0, model: "BLISTA", color: (0, 0, 0))
other = car(x: uniform(-2, 2), y: uniform(5, 30), heading: uniform(0, 360))
require visibleFrom(ego, other)
require dist(ego, other) >= 6
"""


@pytest.fixture
def two_cars():
    from scendbg.dsl import parse
    return parse(TWO_CARS)


@pytest.fixture(scope="session")
def planted():
    from scendbg.dsl import load
    return load(SCENARIOS / "planted.scn")


_CRITERIA: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    """Remember one acceptance line; printed in the terminal summary."""
    _CRITERIA[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
