"""Equal-weight portfolio scores: Sharpe ratio, CQR and CQNS."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DegeneratePortfolio, DimensionError, DomainError, EmptyPortfolio
from .marketdata import MarketContext, ReturnStats

DEFAULT_ALPHA = 1.0


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Binary inclusion vector over the universe; bit i of the integer form is asset i."""

    mask: np.ndarray

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool).ravel()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def __eq__(self, other):
        return isinstance(other, Portfolio) and np.array_equal(self.mask, other.mask)

    def __hash__(self):
        return hash((self.n_assets, self.to_int()))

    def __repr__(self):
        return f"Portfolio({self.to_hex()}, size={self.size}/{self.n_assets})"

    @classmethod
    def from_int(cls, value: int, n_assets: int) -> "Portfolio":
        if value < 0 or value >> n_assets:
            raise DimensionError(f"mask {value:#x} does not fit in {n_assets} assets")
        return cls([(value >> i) & 1 for i in range(n_assets)])

    @classmethod
    def from_hex(cls, text: str, n_assets: int) -> "Portfolio":
        return cls.from_int(int(text, 16), n_assets)

    @classmethod
    def from_indices(cls, indices, n_assets: int) -> "Portfolio":
        mask = np.zeros(n_assets, dtype=bool)
        mask[list(indices)] = True
        return cls(mask)

    @property
    def n_assets(self) -> int:
        return self.mask.size

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def weights(self) -> np.ndarray:
        n = self.size
        if n == 0:
            raise EmptyPortfolio("empty portfolio has no weights")
        return self.mask / n

    def to_int(self) -> int:
        return sum(1 << int(i) for i in self.indices)

    def to_hex(self) -> str:
        return format(self.to_int(), "x")


def as_portfolio(p) -> Portfolio:
    return p if isinstance(p, Portfolio) else Portfolio(p)


def _checked(stats: ReturnStats, p) -> Portfolio:
    p = as_portfolio(p)
    if p.n_assets != stats.n_assets:
        raise DimensionError(f"mask over {p.n_assets} assets, universe has {stats.n_assets}")
    if p.size == 0:
        raise EmptyPortfolio("empty portfolio cannot be scored")
    return p


def portfolio_mean_return(stats: ReturnStats, p) -> float:
    p = _checked(stats, p)
    return float(stats.mu[p.indices].sum() / p.size)


def portfolio_variance(stats: ReturnStats, p) -> float:
    """w' Cov w for equal weights, i.e. (sum of v_i + 2 * sum of cov_ij over i<j) / n^2."""
    p = _checked(stats, p)
    idx = p.indices
    return float(stats.cov[np.ix_(idx, idx)].sum() / p.size**2)


def portfolio_beta(stats: ReturnStats, p) -> float:
    p = _checked(stats, p)
    return float(stats.beta[p.indices].sum() / p.size)


def portfolio_momentum(stats: ReturnStats, p) -> float:
    """Equal-weight covariance with the market, w . Cov_im."""
    p = _checked(stats, p)
    return float(stats.market_cov[p.indices].sum() / p.size)


def _std(stats, p) -> float:
    var = portfolio_variance(stats, p)
    if var <= 0:
        raise DegeneratePortfolio(f"portfolio variance {var:.3e} is not positive")
    return math.sqrt(var)


def sharpe(stats: ReturnStats, ctx: MarketContext, p) -> float:
    """(beta_w * (E[R_w] - R_b) + R_b) / sigma with beta_w the equal-weight beta."""
    p = _checked(stats, p)
    rb = ctx.risk_free_rate
    excess = portfolio_mean_return(stats, p) - rb
    return (portfolio_beta(stats, p) * excess + rb) / _std(stats, p)


def cqr(stats: ReturnStats, p) -> float:
    return portfolio_momentum(stats, p) / _std(stats, p)


def _power(mean: float, exponent: float) -> float:
    if mean < 0 and not float(exponent).is_integer():
        raise DomainError(f"negative expected return {mean:.3e} with non-integer exponent {exponent}")
    if mean == 0 and exponent <= 0:
        raise DomainError(f"zero expected return with non-positive exponent {exponent}")
    return mean**exponent


def cqns(stats: ReturnStats, p, alpha: float = DEFAULT_ALPHA) -> float:
    """Var(R_w) - E[R_w]**(2 + alpha); lower is better."""
    p = _checked(stats, p)
    return portfolio_variance(stats, p) - _power(portfolio_mean_return(stats, p), 2.0 + alpha)


def cqns_batch(stats: ReturnStats, masks, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Vectorised CQNS over a (B, N) stack of masks.

    Empty masks score +inf; masks outside the real-power domain score NaN.
    """
    x = np.atleast_2d(np.asarray(masks, dtype=float))
    if x.shape[1] != stats.n_assets:
        raise DimensionError(f"masks have {x.shape[1]} columns, universe has {stats.n_assets}")
    n = x.sum(axis=1)
    out = np.full(x.shape[0], np.inf)
    ok = n > 0
    xs, ns = x[ok], n[ok]
    mean = xs @ stats.mu / ns
    var = ((xs @ stats.cov) * xs).sum(axis=1) / ns**2
    exponent = 2.0 + alpha
    with np.errstate(invalid="ignore", divide="ignore"):
        if float(exponent).is_integer():
            power = mean ** int(exponent) if exponent >= 0 else mean**exponent
        else:
            power = np.where(mean >= 0, np.abs(mean) ** exponent, np.nan)
    out[ok] = var - power
    return out


@dataclass(frozen=True)
class ScoreSet:
    mask_hex: str
    size: int
    expected_return: float
    variance: float
    std_dev: float
    sharpe: float
    cqr: float
    cqns: float
    momentum: float
    alpha: float

    CSV_COLUMNS = (
        "mask-hex", "size", "expected_return", "variance", "std_dev",
        "sharpe", "cqr", "cqns", "momentum", "alpha",
    )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def csv_row(self) -> list[str]:
        return [self.mask_hex, str(self.size)] + [
            repr(v) for v in (
                self.expected_return, self.variance, self.std_dev, self.sharpe,
                self.cqr, self.cqns, self.momentum, self.alpha,
            )
        ]


def score_all(stats: ReturnStats, ctx: MarketContext, p, alpha: float = DEFAULT_ALPHA) -> ScoreSet:
    p = _checked(stats, p)
    variance = portfolio_variance(stats, p)
    return ScoreSet(
        mask_hex=p.to_hex(),
        size=p.size,
        expected_return=portfolio_mean_return(stats, p),
        variance=variance,
        std_dev=math.sqrt(variance) if variance > 0 else 0.0,
        sharpe=sharpe(stats, ctx, p),
        cqr=cqr(stats, p),
        cqns=cqns(stats, p, alpha),
        momentum=portfolio_momentum(stats, p),
        alpha=float(alpha),
    )
