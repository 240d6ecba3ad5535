from pathlib import Path

import pytest

from regimelab.corpus import load_corpus
from regimelab.estimation import FitConfig, fit_map
from regimelab.synthesis import SynthSpec, synthesize

DATA = Path(__file__).parent / "data"

# Fixed before any fit was inspected; reused by every end-to-end check.
RAMP_SEED = 0

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def focal_path():
    return DATA / "focal18.json"


@pytest.fixture(scope="session")
def focal(focal_path):
    return load_corpus(focal_path.read_bytes())


@pytest.fixture(scope="session")
def ramp():
    """(true trajectory, corpus) for the default ramp scenario."""
    return synthesize(SynthSpec(seed=RAMP_SEED))


@pytest.fixture(scope="session")
def ramp_fit(ramp):
    return fit_map(ramp[1], FitConfig())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
