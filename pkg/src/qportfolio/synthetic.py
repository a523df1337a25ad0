"""Deterministic synthetic market data for demos and tests."""
from __future__ import annotations

import datetime as dt
from pathlib import Path

import numpy as np

from .marketdata import ReturnStats

TRADING_DAYS = 253


def business_days(start: dt.date, count: int) -> list[dt.date]:
    out, day = [], start
    while len(out) < count:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def _write_csv(path: Path, header, dates, values) -> None:
    lines = [",".join(header)]
    for d, row in zip(dates, values):
        lines.append(",".join([d.isoformat()] + [f"{v:.6f}" for v in row]))
    path.write_text("\n".join(lines) + "\n")


def make_dataset(
    directory,
    n_assets: int = 12,
    n_days: int = TRADING_DAYS,
    seed: int = 2020,
    hedge: bool = True,
) -> dict[str, Path]:
    """Write prices.csv, indices.csv and risk_free.csv for a one-factor market.

    Asset returns are ``a_i + beta_i * market + noise``. With ``hedge`` an
    extra negative-beta ticker is appended so the beta filter has work to do.
    One of the three indices drifts downward to exercise the index floor.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    dates = business_days(dt.date(2019, 6, 3), n_days + 1)

    market = rng.normal(4e-4, 0.010, n_days)
    betas = rng.uniform(0.5, 1.8, n_assets)
    drift = rng.normal(2e-4, 4e-4, n_assets)
    idio = rng.uniform(0.008, 0.025, n_assets)
    returns = drift + np.outer(market, betas) + rng.normal(size=(n_days, n_assets)) * idio
    tickers = [f"SYN{i:02d}" for i in range(n_assets)]
    if hedge:
        hedge_ret = 1e-4 - 0.6 * market + rng.normal(0, 0.008, n_days)
        returns = np.column_stack([returns, hedge_ret])
        tickers.append("HEDGE")
    start = rng.uniform(20, 200, returns.shape[1])
    prices = start * np.exp(np.vstack([np.zeros(returns.shape[1]), np.cumsum(returns, axis=0)]))

    index_drift = np.array([0.0, 1e-4, -9e-4])
    index_ret = market[:, None] + index_drift + rng.normal(0, 0.002, (n_days, 3))
    index_prices = np.array([3000.0, 2800.0, 1500.0]) * np.exp(
        np.vstack([np.zeros(3), np.cumsum(index_ret, axis=0)])
    )
    tbill = np.clip(0.018 + np.cumsum(rng.normal(0, 2e-4, n_days + 1)), 0.0, None)

    paths = {
        "prices": directory / "prices.csv",
        "indices": directory / "indices.csv",
        "risk_free": directory / "risk_free.csv",
    }
    _write_csv(paths["prices"], ["date"] + tickers, dates, prices)
    _write_csv(paths["indices"], ["date", "W5000", "SP500", "R2000"], dates, index_prices)
    _write_csv(paths["risk_free"], ["date", "TB3M"], dates, tbill[:, None])
    return paths


def random_stats(n_assets: int, seed: int = 0, mean_scale: float = 0.2) -> ReturnStats:
    """Random one-factor statistics with returns large enough to compete with variance.

    Useful for QUBO and solver tests where the CQNS optimum should not be a
    trivial single asset.
    """
    rng = np.random.default_rng(seed)
    loadings = rng.normal(size=n_assets) * 0.15
    cov = np.outer(loadings, loadings) + np.diag(rng.uniform(0.01, 0.06, n_assets))
    mu = rng.uniform(-0.25 * mean_scale, mean_scale, n_assets)
    market_cov = loadings * 0.15
    return ReturnStats(
        tickers=tuple(f"A{i}" for i in range(n_assets)),
        mu=mu,
        cov=cov,
        market_cov=market_cov,
        beta=market_cov / 0.0225,
        n_days=TRADING_DAYS,
        market_var=0.0225,
    )
