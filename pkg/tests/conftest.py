import numpy as np
import pytest

from cellsync.synthgen import RegionSpec, SynthSpec, generate


@pytest.fixture(scope="session")
def small_dataset():
    regions = (
        RegionSpec(3, 4, 0.8, 0.1, "A"),
        RegionSpec(3, 4, 0.2, 0.4, "B"),
        RegionSpec(2, 5, 0.5, 0.0, "C"),
    )
    return generate(SynthSpec(regions, n_days=12, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
