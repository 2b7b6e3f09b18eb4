import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from constrec.constraints import FeatureMap, InteractionTensor

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile("default")


def random_tensor(rng: np.random.Generator, m: int, n: int, d: int, t: int,
                  max_active: int = 2, binary: bool = False) -> InteractionTensor:
    records = []
    for _ in range(t):
        size = int(rng.integers(1, max_active + 1))
        bits = sorted(rng.choice(d, size=min(size, d), replace=False).tolist())
        r = float(rng.integers(0, 2)) if binary else float(rng.random())
        records.append((int(rng.integers(m)), int(rng.integers(n)), bits, r,
                        float(rng.uniform(0.5, 2.0))))
    return InteractionTensor.from_records(records, m, n, d)


def random_features(rng: np.random.Generator, n: int, d: int) -> FeatureMap:
    rows = (rng.random((n, d)) < 0.5).astype(int)
    rows[np.arange(n), rng.integers(0, d, n)] = 1
    return FeatureMap(rows)


# criterion lines collected by test_acceptance and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
