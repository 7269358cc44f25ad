import os
import sys

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(rng, rows, cols, w=1.0, h_max=4.0, h_min=0.0):
    from viewdep.model import Heightfield
    heights = rng.uniform(h_min, h_max, (rows, cols))
    colors = rng.uniform(0.0, 1.0, (rows, cols, 3))
    return Heightfield(heights, colors, w, h_min, h_max)


ACCEPTANCE_LINES: list[str] = []


def report_criterion(cid: str, passed: bool, detail: str) -> str:
    """Record one acceptance line; all of them are repeated in the terminal summary."""
    line = f"[{'PASS' if passed else 'FAIL'}] {cid}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
