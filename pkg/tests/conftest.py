import numpy as np
import pytest

from msmkp.fixtures import load_fixture
from msmkp.hysteresis import KpModel, KpOperator


@pytest.fixture
def fixture_model() -> KpModel:
    return load_fixture()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_model(rng, n=3, m_range=(0.2, 2.0)) -> KpModel:
    ops = [KpOperator(rng.uniform(-1, 1), rng.uniform(0, 1.5), rng.uniform(*m_range),
                      rng.uniform(0.5, 2.0)) for _ in range(n)]
    return KpModel(ops, rng.uniform(0.1, 1.0, n))


def branch_oracle(u, alpha, beta, m, gamma, y0=0.0):
    """Ascending/descending branch logic in zero-crossing form, one operator."""
    y = min(m, max(-m, y0 / gamma))
    prev = None
    out = []
    for x in u:
        if prev is not None and x > prev:
            y = max(y, min(m, max(-m, x - alpha)))
        elif prev is not None and x < prev:
            y = min(y, min(m, max(-m, x - beta)))
        elif prev is None:
            # first sample: the point must lie between both branches
            y = min(max(y, min(m, max(-m, x - alpha))), min(m, max(-m, x - beta)))
        prev = x
        out.append(gamma * y)
    return np.array(out)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, title, ok, detail):
        line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
