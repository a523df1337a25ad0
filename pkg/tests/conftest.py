import numpy as np
import pytest

from qportfolio.marketdata import MarketContext, ReturnStats
from qportfolio.synthetic import random_stats

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_stats(mu, cov, market_cov=None, beta=None, tickers=None) -> ReturnStats:
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    market_cov = np.zeros(n) if market_cov is None else np.asarray(market_cov, dtype=float)
    beta = np.ones(n) if beta is None else np.asarray(beta, dtype=float)
    tickers = tuple(tickers) if tickers is not None else tuple(f"A{i}" for i in range(n))
    return ReturnStats(tickers, mu, np.asarray(cov, dtype=float), market_cov, beta, 253, 1e-4)


@pytest.fixture
def zero_ctx():
    return MarketContext((0.0,), 0.0, 0.0, 0.0)


@pytest.fixture
def stats10():
    return random_stats(10, seed=11)


@pytest.fixture
def stats12():
    return random_stats(12, seed=5)
