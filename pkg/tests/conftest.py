import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthgen.benchmark import SimConfig, simulate  # noqa: E402
from synthgen.dataset import Binary, ColumnSchema, Dataset, GroupLabel  # noqa: E402


@pytest.fixture(scope="session")
def bench_small():
    """A 400-row benchmark table shared by the faster tests."""
    return simulate(SimConfig(n=400, seed=11))


@pytest.fixture
def mixed():
    rng = np.random.default_rng(5)
    n = 120
    schema = (
        ColumnSchema("a"),
        ColumnSchema("b"),
        ColumnSchema("c", Binary),
        ColumnSchema("g", Binary, GroupLabel),
    )
    values = np.column_stack([
        rng.normal(size=n),
        rng.lognormal(size=n),
        rng.integers(0, 2, n),
        rng.integers(0, 2, n),
    ])
    return Dataset(schema, values)


def pytest_terminal_summary(terminalreporter):
    from verdicts import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(LINES):
            terminalreporter.write_line(LINES[key])
