import numpy as np
import pytest

from acousep.signals import Label, builtin_spec, synthesize

# Filled by test_acceptance.py and echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}

SIX_CLASSES = (Label.DRONE, Label.AEROPLANE, Label.BIRD, Label.WIND, Label.RAIN, Label.THUNDER)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def six_sources(seed: int, duration_s: float = 10000 / 24000, rate: int = 24000):
    """One synthetic source of each built-in class."""
    return [synthesize(builtin_spec(lab, seed=seed * 10 + i), duration_s, rate) for i, lab in enumerate(SIX_CLASSES)]
