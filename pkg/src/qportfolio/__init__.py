"""Portfolio selection by Chicago Quantum Net Score, compiled to per-size QUBOs.

Modules:
    marketdata  price ingestion, return statistics, filters, PSD repair
    scoring     Sharpe ratio, CQR and CQNS for equal-weight portfolios
    qubo        QUBO assembly, shift/tanh transforms, Ising form, export
    solvers     brute force, random sampling, annealing, genetic search, stars
    harness     the end-to-end experiment and its reports
"""
from .errors import PortfolioError
from .marketdata import (
    FilterReport,
    MarketContext,
    PriceSeries,
    ReturnStats,
    apply_filters,
    build_market_context,
    compute_log_returns,
    compute_stats,
    load_prices,
    repair_psd,
)
from .qubo import (
    IsingModel,
    QuboMatrix,
    ShiftParams,
    apply_shift,
    build_qubo,
    export_qubo,
    import_qubo,
    landscape_profile,
    qubo_energy,
    shift_factor,
    tanh_scale,
    to_ising,
)
from .scoring import Portfolio, ScoreSet, cqns, cqr, portfolio_mean_return, portfolio_variance, score_all, sharpe
from .solvers import (
    GaConfig,
    SaConfig,
    SolveResult,
    StarReport,
    brute_force,
    genetic,
    heuristic_seed,
    random_sample,
    simulated_anneal,
    star_analysis,
)

__version__ = "0.1.0"
