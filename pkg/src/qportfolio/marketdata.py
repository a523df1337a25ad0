"""Price ingestion, return statistics, universe filters and covariance repair."""
from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import (
    DegenerateMarket,
    DomainError,
    EmptyUniverse,
    InsufficientHistory,
    MalformedData,
    NotRepairable,
)

DEFAULT_REQUIRED_DAYS = 253
DEFAULT_CLIP_THRESHOLD = 1e-6


@dataclass(frozen=True)
class PriceSeries:
    """Date-aligned adjusted-close matrix, one column per ticker.

    ``incomplete`` lists tickers that were present in the source but dropped
    at load time because their history had gaps.
    """

    tickers: tuple[str, ...]
    dates: tuple[dt.date, ...]
    prices: np.ndarray
    incomplete: tuple[str, ...] = ()

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        if prices.ndim != 2 or prices.shape[1] != len(self.tickers):
            raise MalformedData("price matrix shape does not match ticker count")
        if prices.shape[0] != len(self.dates):
            raise MalformedData("price matrix rows do not match date count")
        if prices.shape[0] < 2:
            raise InsufficientHistory("at least 2 price rows are required")
        if not np.all(np.isfinite(prices)):
            raise MalformedData("price matrix contains missing or non-finite cells")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise MalformedData("dates must be strictly increasing")
        prices.setflags(write=False)
        object.__setattr__(self, "prices", prices)

    @property
    def n_rows(self) -> int:
        return self.prices.shape[0]

    def column(self, ticker: str) -> np.ndarray:
        return self.prices[:, self.tickers.index(ticker)]

    def select(self, tickers: Sequence[str]) -> "PriceSeries":
        idx = [self.tickers.index(t) for t in tickers]
        return PriceSeries(tuple(tickers), self.dates, self.prices[:, idx], self.incomplete)


class PriceSource(Protocol):
    """Anything that can produce a PriceSeries (local file, remote fetcher, ...)."""

    def load(self) -> PriceSeries: ...


@dataclass(frozen=True)
class CsvPriceSource:
    path: Path
    on_missing: str = "raise"

    def load(self) -> PriceSeries:
        return load_prices(self.path, on_missing=self.on_missing)


def load_prices(path, on_missing: str = "raise") -> PriceSeries:
    """Read a ``date,<T1>,<T2>,...`` CSV into a PriceSeries sorted by date.

    With ``on_missing="drop"`` tickers containing empty cells are removed and
    recorded in ``PriceSeries.incomplete`` instead of raising.
    """
    if on_missing not in ("raise", "drop"):
        raise ValueError(f"on_missing must be 'raise' or 'drop', got {on_missing!r}")
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise MalformedData(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if len(header) < 2:
        raise MalformedData(f"{path}: need a date column and at least one ticker")
    tickers = [h.strip() for h in header[1:]]
    if len(set(tickers)) != len(tickers):
        raise MalformedData(f"{path}: duplicate ticker columns")
    if len(body) < 2:
        raise InsufficientHistory(f"{path}: {len(body)} data rows, need at least 2")

    dates = []
    values = np.full((len(body), len(tickers)), np.nan)
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise MalformedData(f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}")
        try:
            dates.append(dt.date.fromisoformat(row[0].strip()))
        except ValueError as exc:
            raise MalformedData(f"{path}: bad date {row[0]!r} on row {r + 2}") from exc
        for c, cell in enumerate(row[1:]):
            cell = cell.strip()
            if not cell:
                if on_missing == "raise":
                    raise MalformedData(f"{path}: empty cell for {tickers[c]} on row {r + 2}")
                continue
            try:
                values[r, c] = float(cell)
            except ValueError as exc:
                raise MalformedData(f"{path}: non-numeric price {cell!r} on row {r + 2}") from exc

    order = sorted(range(len(dates)), key=dates.__getitem__)
    dates = [dates[i] for i in order]
    values = values[order]
    if len(set(dates)) != len(dates):
        raise MalformedData(f"{path}: duplicate dates")

    complete = ~np.isnan(values).any(axis=0)
    keep = [t for t, ok in zip(tickers, complete) if ok]
    dropped = tuple(t for t, ok in zip(tickers, complete) if not ok)
    if not keep:
        raise EmptyUniverse(f"{path}: every ticker has missing cells")
    return PriceSeries(tuple(keep), tuple(dates), values[:, complete], dropped)


def align_dates(*series: PriceSeries) -> list[PriceSeries]:
    """Restrict every series to the dates they all share."""
    common = set(series[0].dates)
    for s in series[1:]:
        common &= set(s.dates)
    out = []
    for s in series:
        rows = [i for i, d in enumerate(s.dates) if d in common]
        out.append(PriceSeries(s.tickers, tuple(s.dates[i] for i in rows), s.prices[rows], s.incomplete))
    return out


def compute_log_returns(prices: PriceSeries | np.ndarray) -> np.ndarray:
    """Daily log returns ``ln(p[t+1] / p[t])``, one row fewer than the input."""
    p = prices.prices if isinstance(prices, PriceSeries) else np.asarray(prices, dtype=float)
    if np.any(p <= 0):
        raise DomainError("log returns need strictly positive prices")
    return np.diff(np.log(p), axis=0)


def composite_market_returns(index_prices: PriceSeries, weights=None) -> np.ndarray:
    """Weighted mean of the per-index daily log returns (equal weights by default)."""
    r = compute_log_returns(index_prices)
    w = _index_weights(r.shape[1], weights)
    return r @ w


def _index_weights(k: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(k, 1.0 / k)
    w = np.asarray(weights, dtype=float)
    if w.shape != (k,) or np.any(w < 0) or w.sum() <= 0:
        raise MalformedData("index weights must be non-negative, one per index")
    return w / w.sum()


@dataclass(frozen=True)
class MarketContext:
    """Market-level rates, all quoted at the frequency of the return series."""

    index_returns: tuple[float, ...]
    floor: float
    risk_free_rate: float
    market_return: float


def build_market_context(index_returns, risk_free_series, floor: float = 0.0, weights=None) -> MarketContext:
    values = np.asarray(index_returns, dtype=float).ravel()
    if values.size == 0:
        raise MalformedData("at least one index return is required")
    rf = np.asarray(risk_free_series, dtype=float).ravel()
    if rf.size == 0:
        raise MalformedData("risk-free series is empty")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(rf)) and np.isfinite(floor)):
        raise MalformedData("market inputs must be finite")
    floored = np.maximum(values, floor)
    market = float(floored @ _index_weights(values.size, weights))
    return MarketContext(
        index_returns=tuple(float(v) for v in floored),
        floor=float(floor),
        risk_free_rate=float(rf.mean()),
        market_return=market,
    )


@dataclass(frozen=True)
class ReturnStats:
    """Per-asset return statistics for one universe."""

    tickers: tuple[str, ...]
    mu: np.ndarray
    cov: np.ndarray
    market_cov: np.ndarray
    beta: np.ndarray
    n_days: int
    market_var: float

    def __post_init__(self):
        n = len(self.tickers)
        for name in ("mu", "cov", "market_cov", "beta"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.cov.shape != (n, n) or not (self.mu.shape == self.market_cov.shape == self.beta.shape == (n,)):
            raise MalformedData("statistic shapes disagree with ticker count")

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov)

    def subset(self, indices) -> "ReturnStats":
        idx = np.asarray(indices, dtype=int)
        return ReturnStats(
            tickers=tuple(self.tickers[i] for i in idx),
            mu=self.mu[idx],
            cov=self.cov[np.ix_(idx, idx)],
            market_cov=self.market_cov[idx],
            beta=self.beta[idx],
            n_days=self.n_days,
            market_var=self.market_var,
        )

    def with_cov(self, cov) -> "ReturnStats":
        return ReturnStats(self.tickers, self.mu, cov, self.market_cov, self.beta, self.n_days, self.market_var)

    def to_dict(self) -> dict:
        return {
            "tickers": list(self.tickers),
            "mu": self.mu.tolist(),
            "cov": self.cov.tolist(),
            "market_cov": self.market_cov.tolist(),
            "beta": self.beta.tolist(),
            "n_days": self.n_days,
            "market_var": self.market_var,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReturnStats":
        return cls(
            tickers=tuple(d["tickers"]),
            mu=np.array(d["mu"], dtype=float),
            cov=np.array(d["cov"], dtype=float),
            market_cov=np.array(d["market_cov"], dtype=float),
            beta=np.array(d["beta"], dtype=float),
            n_days=int(d["n_days"]),
            market_var=float(d["market_var"]),
        )


def compute_stats(returns, market_returns, tickers: Sequence[str] | None = None) -> ReturnStats:
    """Means, sample covariance (n-1 divisor), market covariances and betas."""
    r = np.asarray(returns, dtype=float)
    m = np.asarray(market_returns, dtype=float).ravel()
    if r.ndim != 2:
        raise MalformedData("returns must be a 2-D matrix (days x assets)")
    if r.shape[0] != m.shape[0]:
        raise MalformedData(f"market series has {m.shape[0]} rows, returns have {r.shape[0]}")
    if r.shape[0] < 2:
        raise InsufficientHistory("need at least 2 return observations")
    if tickers is None:
        tickers = [f"A{i}" for i in range(r.shape[1])]
    n_days = r.shape[0]
    mu = r.mean(axis=0)
    dev = r - mu
    cov = dev.T @ dev / (n_days - 1)
    cov = (cov + cov.T) / 2
    mdev = m - m.mean()
    market_var = float(mdev @ mdev / (n_days - 1))
    if market_var <= 0:
        raise DegenerateMarket("market return series has zero variance")
    market_cov = dev.T @ mdev / (n_days - 1)
    return ReturnStats(
        tickers=tuple(tickers),
        mu=mu,
        cov=cov,
        market_cov=market_cov,
        beta=market_cov / market_var,
        n_days=n_days,
        market_var=market_var,
    )


@dataclass
class FilterReport:
    kept: list[str]
    removed: list[tuple[str, str]] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(
            {"kept": self.kept, "removed": [{"ticker": t, "reason": r} for t, r in self.removed]},
            indent=2,
        )


def apply_filters(stats: ReturnStats, prices: PriceSeries, required_days: int = DEFAULT_REQUIRED_DAYS):
    """Drop assets with beta < 0, beta > 10 or too short a continuous history.

    Surviving statistics are sliced out of ``stats``; nothing is recomputed.
    """
    if set(stats.tickers) != set(prices.tickers):
        raise MalformedData("stats and prices cover different tickers")
    observations = prices.n_rows - 1
    kept_idx, removed = [], [(t, "discontinuous_history") for t in prices.incomplete]
    for i, ticker in enumerate(stats.tickers):
        if observations < required_days:
            removed.append((ticker, "discontinuous_history"))
        elif stats.beta[i] < 0:
            removed.append((ticker, "beta_low"))
        elif stats.beta[i] > 10:
            removed.append((ticker, "beta_high"))
        else:
            kept_idx.append(i)
    if not kept_idx:
        raise EmptyUniverse("no asset survived the filters")
    kept = stats.subset(kept_idx)
    return kept, FilterReport(kept=list(kept.tickers), removed=removed)


def cholesky_succeeds(matrix) -> bool:
    """Cholesky test for positive semi-definiteness.

    A diagonal jitter at the level of floating-point round-off
    (10 * d * eps * max|diag|) lets exactly-singular PSD matrices pass while
    any eigenvalue that is negative beyond round-off still fails.
    """
    m = np.asarray(matrix, dtype=float)
    d = m.shape[0]
    scale = max(float(np.max(np.abs(np.diag(m)))) if d else 0.0, np.finfo(float).tiny)
    jitter = 10 * d * np.finfo(float).eps * scale
    try:
        np.linalg.cholesky(m + jitter * np.eye(d))
    except np.linalg.LinAlgError:
        return False
    return True


def repair_psd(cov, clip_threshold: float = DEFAULT_CLIP_THRESHOLD) -> np.ndarray:
    """Return ``cov`` unchanged if it passes the Cholesky test, else clip tiny eigenvalues.

    Eigenvalues with magnitude below ``clip_threshold`` are set to exactly zero
    and the matrix is rebuilt and re-symmetrized. Raises NotRepairable when an
    eigenvalue is at or below ``-clip_threshold``.
    """
    m = np.array(cov, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise MalformedData("covariance must be square")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12 * max(1.0, float(np.max(np.abs(m))))):
        raise MalformedData("covariance must be symmetric")
    if cholesky_succeeds(m):
        return m
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    if np.any(vals <= -clip_threshold):
        raise NotRepairable(f"eigenvalue {vals.min():.3e} is below -{clip_threshold:g}")
    vals = np.where(np.abs(vals) < clip_threshold, 0.0, vals)
    out = (vecs * vals) @ vecs.T
    return (out + out.T) / 2
