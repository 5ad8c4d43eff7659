import numpy as np
import pytest

from fracflow.grid import Grid1D
from fracflow.operator import Field

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict(number, passed, detail)``."""

    def record(number: int, passed: bool, detail: str):
        prev = _VERDICTS.get(number)
        ok = bool(passed) and (prev is None or prev[0])
        text = detail if prev is None else f"{prev[1]}; {detail}"
        _VERDICTS[number] = (ok, text)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        ok, detail = _VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def random_field(grid: Grid1D, seed: int, signed: bool = True) -> Field:
    rng = np.random.default_rng(seed)
    lo = -1.0 if signed else 0.0
    return Field(grid, rng.uniform(lo, 1.0, grid.n))


def step_tol_for(p: float) -> float:
    return 1e-10 if p == 2 else 1e-8
