"""End-to-end experiment: ingest, score, compile QUBOs, solve, compare."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InsufficientPool, InsufficientStars, IoError, MalformedData, ParamOutOfRange
from .marketdata import (
    DEFAULT_CLIP_THRESHOLD,
    DEFAULT_REQUIRED_DAYS,
    FilterReport,
    MarketContext,
    ReturnStats,
    align_dates,
    apply_filters,
    build_market_context,
    composite_market_returns,
    compute_log_returns,
    compute_stats,
    load_prices,
    repair_psd,
)
from .qubo import (
    DEFAULT_MULTIPLIER,
    apply_shift,
    build_qubo,
    export_qubo,
    landscape_profile,
    shift_factor,
    tanh_scale,
)
from .scoring import DEFAULT_ALPHA, Portfolio, ScoreSet, cqns, score_all
from .solvers import (
    CqnsObjective,
    GaConfig,
    SaConfig,
    SampleSummary,
    SolveResult,
    brute_force,
    cqns_rescorer,
    genetic,
    heuristic_seed,
    random_sample,
    simulated_anneal,
    star_analysis,
)

log = logging.getLogger(__name__)

BUNDLED_DATA = Path(__file__).parent / "data" / "synthetic12"
TIMINGS_FILE = "timings.json"


@dataclass
class ExperimentConfig:
    prices: Path
    indices: Path
    risk_free: Path
    output: Path = Path("qportfolio-out")
    alpha: float = DEFAULT_ALPHA
    m: float = DEFAULT_MULTIPLIER
    floor: float = 0.0
    clip_threshold: float = DEFAULT_CLIP_THRESHOLD
    required_days: int = DEFAULT_REQUIRED_DAYS
    periods_per_year: int = 252
    index_weights: tuple[float, ...] | None = None
    n_min: int = 2
    n_max: int | None = None
    mode: str = "paper"
    shift: bool = True
    tanh_scale: bool = True
    seed: int = 0
    workers: int = 1
    # genetic algorithm
    ga_population: int = 256
    ga_generations: int = 200
    ga_elitism_prob: float = 0.1
    ga_mutation_prob: float | None = None
    ga_tournament: int = 3
    # simulated annealing
    sa_steps: int = 5000
    sa_restarts: int = 20
    sa_initial_temp: float | None = None
    sa_cooling_rate: float | None = None
    # random sampling, brute force, landscapes, stars
    random_samples: int = 100_000
    brute_max_assets: int = 20
    landscape_max_assets: int = 16
    landscape_sample_budget: int | None = None
    star_k: int = 32
    star_extras: int = 1
    seed_cap: int = 64

    def validate(self) -> None:
        for name in ("prices", "indices", "risk_free"):
            if not Path(getattr(self, name)).is_file():
                raise MalformedData(f"{name} file {getattr(self, name)} does not exist")
        if self.n_min < 2:
            raise ParamOutOfRange("n_min must be at least 2")
        if self.n_max is not None and self.n_max < self.n_min:
            raise ParamOutOfRange("n_max must be at least n_min")

    def ga_config(self, seed: int, seeds: Sequence = ()) -> GaConfig:
        return GaConfig(
            population=self.ga_population,
            generations=self.ga_generations,
            elitism_prob=self.ga_elitism_prob,
            mutation_prob=self.ga_mutation_prob,
            tournament=self.ga_tournament,
            seeds=tuple(seeds),
            seed=seed,
        )

    def sa_config(self, seed: int) -> SaConfig:
        return SaConfig(
            initial_temp=self.sa_initial_temp,
            cooling_rate=self.sa_cooling_rate,
            steps=self.sa_steps,
            restarts=self.sa_restarts,
            seed=seed,
        )

    @classmethod
    def bundled(cls, output, **overrides) -> "ExperimentConfig":
        """Config pointing at the packaged 12-asset synthetic dataset."""
        return cls(
            prices=BUNDLED_DATA / "prices.csv",
            indices=BUNDLED_DATA / "indices.csv",
            risk_free=BUNDLED_DATA / "risk_free.csv",
            output=Path(output),
            **overrides,
        )


# section -> {option: (field, parser)}
_OPTIONAL_FLOAT = lambda s: None if s.strip().lower() in ("", "none", "auto") else float(s)  # noqa: E731
_OPTIONAL_INT = lambda s: None if s.strip().lower() in ("", "none", "auto") else int(s)  # noqa: E731


def _BOOL(s: str) -> bool:
    value = s.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_CONFIG_KEYS = {
    "data": {
        "prices": ("prices", Path),
        "indices": ("indices", Path),
        "risk_free": ("risk_free", Path),
        "index_weights": ("index_weights", lambda s: tuple(float(v) for v in s.split(",")) if s.strip() else None),
        "periods_per_year": ("periods_per_year", int),
    },
    "experiment": {
        "output": ("output", Path),
        "alpha": ("alpha", float),
        "m": ("m", float),
        "floor": ("floor", float),
        "clip_threshold": ("clip_threshold", float),
        "required_days": ("required_days", int),
        "n_min": ("n_min", int),
        "n_max": ("n_max", _OPTIONAL_INT),
        "mode": ("mode", str),
        "shift": ("shift", _BOOL),
        "tanh_scale": ("tanh_scale", _BOOL),
        "seed": ("seed", int),
        "workers": ("workers", int),
    },
    "ga": {
        "population": ("ga_population", int),
        "generations": ("ga_generations", int),
        "elitism_prob": ("ga_elitism_prob", float),
        "mutation_prob": ("ga_mutation_prob", _OPTIONAL_FLOAT),
        "tournament": ("ga_tournament", int),
    },
    "sa": {
        "steps": ("sa_steps", int),
        "restarts": ("sa_restarts", int),
        "initial_temp": ("sa_initial_temp", _OPTIONAL_FLOAT),
        "cooling_rate": ("sa_cooling_rate", _OPTIONAL_FLOAT),
    },
    "random": {"samples": ("random_samples", int)},
    "brute": {"max_assets": ("brute_max_assets", int)},
    "landscape": {
        "max_assets": ("landscape_max_assets", int),
        "sample_budget": ("landscape_sample_budget", _OPTIONAL_INT),
    },
    "stars": {
        "k": ("star_k", int),
        "extras": ("star_extras", int),
        "seed_cap": ("seed_cap", int),
    },
}


def load_config(path, **overrides) -> ExperimentConfig:
    """Read an INI-style config; relative paths resolve against the file's directory."""
    path = Path(path)
    parser = configparser.ConfigParser()
    try:
        with path.open() as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise MalformedData(f"cannot read config {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in _CONFIG_KEYS:
            raise MalformedData(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _CONFIG_KEYS[section]:
                raise MalformedData(f"unknown key {key!r} in [{section}]")
            name, conv = _CONFIG_KEYS[section][key]
            try:
                values[name] = conv(raw)
            except ValueError as exc:
                raise MalformedData(f"bad value for {section}.{key}: {raw!r}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    for name in ("prices", "indices", "risk_free", "output"):
        if name in values and not Path(values[name]).is_absolute():
            values[name] = path.parent / values[name]
    missing = [n for n in ("prices", "indices", "risk_free") if n not in values]
    if missing:
        raise MalformedData(f"config is missing data paths: {', '.join(missing)}")
    return ExperimentConfig(**values)


def stage_seed(master: int, label: str) -> int:
    """Seed for one randomized stage, stable across runs and independent of other stages."""
    digest = hashlib.sha256(f"{master}:{label}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


# -- ingestion ----------------------------------------------------------------

@dataclass
class MarketData:
    stats: ReturnStats
    ctx: MarketContext
    filters: FilterReport


def ingest(
    prices_path,
    indices_path,
    risk_free_path,
    *,
    floor: float = 0.0,
    clip_threshold: float = DEFAULT_CLIP_THRESHOLD,
    required_days: int = DEFAULT_REQUIRED_DAYS,
    periods_per_year: int = 252,
    index_weights=None,
) -> MarketData:
    """Load files, compute statistics, filter the universe and repair the covariance.

    Index returns, the floor and the risk-free rate all end up at daily
    frequency; the risk-free file is read as annual yields.
    """
    prices = load_prices(prices_path, on_missing="drop")
    indices = load_prices(indices_path)
    risk_free = load_prices(risk_free_path)
    prices, indices = align_dates(prices, indices)
    returns = compute_log_returns(prices)
    market = composite_market_returns(indices, index_weights)
    stats = compute_stats(returns, market, prices.tickers)
    stats, report = apply_filters(stats, prices, required_days)
    stats = stats.with_cov(repair_psd(stats.cov, clip_threshold))
    index_returns = compute_log_returns(indices).mean(axis=0)
    ctx = build_market_context(
        index_returns, risk_free.prices[:, 0] / periods_per_year, floor=floor, weights=index_weights
    )
    return MarketData(stats, ctx, report)


def context_to_dict(ctx: MarketContext) -> dict:
    return dataclasses.asdict(ctx) | {"index_returns": list(ctx.index_returns)}


def context_from_dict(d: dict) -> MarketContext:
    return MarketContext(tuple(d["index_returns"]), d["floor"], d["risk_free_rate"], d["market_return"])


# -- reporting helpers --------------------------------------------------------

@dataclass(frozen=True)
class ScoredResult:
    method: str
    scores: ScoreSet


def score_results(results: Iterable[SolveResult], stats, ctx, alpha) -> list[ScoredResult]:
    return [ScoredResult(r.method, score_all(stats, ctx, r.mask, alpha)) for r in results]


FRONTIER_COLUMNS = ("method", "mask-hex", "size", "std_dev", "expected_return", "sharpe", "cqr", "cqns", "momentum")


def _writer(path):
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return fh, csv.writer(fh, lineterminator="\n")


def emit_frontier_csv(pool: Sequence[ScoredResult], path) -> None:
    """Risk/return rows for plotting, ordered by (method, size, mask)."""
    if not pool:
        raise InsufficientPool("frontier pool is empty")
    rows = sorted(pool, key=lambda r: (r.method, r.scores.size, int(r.scores.mask_hex, 16)))
    fh, w = _writer(path)
    with fh:
        w.writerow(FRONTIER_COLUMNS)
        for r in rows:
            s = r.scores
            w.writerow([r.method, s.mask_hex, s.size] + [
                repr(v) for v in (s.std_dev, s.expected_return, s.sharpe, s.cqr, s.cqns, s.momentum)
            ])


def write_result_pool(pool: Sequence[ScoredResult], path, wall_times: Sequence[float] | None = None) -> None:
    """ScoreSet CSV schema plus a method column (and wall_time when given)."""
    fh, w = _writer(path)
    with fh:
        header = list(ScoreSet.CSV_COLUMNS) + ["method"] + (["wall_time"] if wall_times is not None else [])
        w.writerow(header)
        for i, r in enumerate(pool):
            row = r.scores.csv_row() + [r.method]
            if wall_times is not None:
                row.append(repr(wall_times[i]))
            w.writerow(row)


@dataclass(frozen=True)
class PoolRow:
    method: str
    mask_hex: str
    size: int
    cqns: float


def read_result_pool(path) -> list[PoolRow]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            return [PoolRow(r.get("method", ""), r["mask-hex"], int(r["size"]), float(r["cqns"])) for r in reader]
    except (OSError, KeyError, ValueError) as exc:
        raise MalformedData(f"cannot read result pool {path}: {exc}") from exc


@dataclass
class SizeBaseline:
    """Per-size mean and best objective of a baseline pool."""

    count: dict[int, int]
    mean: dict[int, float]
    best: dict[int, float]

    @classmethod
    def from_results(cls, results) -> "SizeBaseline":
        groups: dict[int, list[float]] = {}
        for r in results:
            if math.isfinite(r.cqns):
                groups.setdefault(_size(r), []).append(r.cqns)
        return cls(
            {s: len(v) for s, v in groups.items()},
            {s: float(np.mean(v)) for s, v in groups.items()},
            {s: float(min(v)) for s, v in groups.items()},
        )

    @classmethod
    def from_summary(cls, summary: SampleSummary) -> "SizeBaseline":
        sizes = [s for s in range(summary.size_valid.size) if summary.size_valid[s] > 0]
        return cls(
            {s: int(summary.size_valid[s]) for s in sizes},
            {s: float(summary.size_mean[s]) for s in sizes},
            {s: float(summary.size_best[s]) for s in sizes},
        )


def _size(r) -> int:
    return r.size if hasattr(r, "size") else r.mask.size


@dataclass(frozen=True)
class SizeRow:
    size: int
    method: str
    best_cqns: float
    baseline_mean: float | None
    baseline_best: float | None
    advantage: float | None
    beats_mean: bool | None

    COLUMNS = ("size", "method", "best_cqns", "baseline_mean", "baseline_best", "advantage", "beats_mean")

    def csv_row(self) -> list[str]:
        fmt = lambda v: "" if v is None else repr(v)  # noqa: E731
        return [str(self.size), self.method, repr(self.best_cqns), fmt(self.baseline_mean),
                fmt(self.baseline_best), fmt(self.advantage),
                "" if self.beats_mean is None else str(self.beats_mean).lower()]


def compare_by_size(results, baseline) -> list[SizeRow]:
    """Best CQNS per (size, method) against the baseline's per-size mean and best.

    ``advantage`` is baseline best minus method best (positive = method
    better); ``beats_mean`` flags sizes where the method's best is below the
    baseline mean. Sizes without baseline data carry None in those columns.
    """
    if not isinstance(baseline, SizeBaseline):
        baseline = SizeBaseline.from_results(baseline)
    best: dict[tuple[int, str], float] = {}
    for r in results:
        if not math.isfinite(r.cqns):
            continue
        key = (_size(r), r.method)
        best[key] = min(best.get(key, math.inf), r.cqns)
    rows = []
    for (size, method), value in sorted(best.items()):
        if size in baseline.mean:
            mean, bbest = baseline.mean[size], baseline.best[size]
            rows.append(SizeRow(size, method, value, mean, bbest, bbest - value, value < mean))
        else:
            rows.append(SizeRow(size, method, value, None, None, None, None))
    return rows


def write_size_table(rows: Sequence[SizeRow], path) -> None:
    fh, w = _writer(path)
    with fh:
        w.writerow(SizeRow.COLUMNS)
        for r in rows:
            w.writerow(r.csv_row())


@dataclass
class ComparisonReport:
    methods: dict[str, dict]
    by_size: list[SizeRow]
    frontier: list[tuple[float, float, str]]
    metadata: dict
    results: list[SolveResult] = field(repr=False, default_factory=list)
    # seconds per stage; written to timings.json, kept out of comparison.json
    timings: dict[str, float] = field(default_factory=dict)

    def validate(self, stats: ReturnStats, alpha: float) -> None:
        """Re-score every stored mask; stored CQNS must match to 1e-12."""
        for r in self.results:
            fresh = cqns(stats, r.mask, alpha)
            if not abs(fresh - r.cqns) <= 1e-12:
                raise MalformedData(f"{r.method} mask {r.mask.to_hex()} re-scores to {fresh!r}, stored {r.cqns!r}")

    def to_dict(self) -> dict:
        return {
            "methods": self.methods,
            "by_size": [dataclasses.asdict(r) for r in self.by_size],
            "frontier": [{"std_dev": s, "expected_return": e, "method": m} for s, e, m in self.frontier],
            "metadata": self.metadata,
        }


def _method_summary(results: Sequence[SolveResult]) -> dict[str, dict]:
    def key(r):
        return (r.method, r.cqns if math.isfinite(r.cqns) else math.inf, r.mask.to_int())

    out: dict[str, dict] = {}
    for r in sorted(results, key=key):
        entry = out.setdefault(r.method, {"best_cqns": r.cqns, "best_mask": r.mask.to_hex(), "evaluations": 0})
        entry["evaluations"] += r.evaluations
    return out


def _dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# -- the workflow -------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig) -> ComparisonReport:
    """Run the full workflow and write every artifact into ``cfg.output``.

    Files are staged in a sibling directory and moved into place only when
    every stage succeeds. All files except timings.json are a pure function of
    the config and master seed.
    """
    cfg.validate()
    output = Path(cfg.output)
    staging = output.with_name(output.name + ".partial")
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir(parents=True)
    try:
        report = _run(cfg, staging)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    output.mkdir(parents=True, exist_ok=True)
    for src in sorted(staging.rglob("*")):
        dest = output / src.relative_to(staging)
        if src.is_dir():
            dest.mkdir(exist_ok=True)
        else:
            os.replace(src, dest)
    shutil.rmtree(staging)
    return report


def _run(cfg: ExperimentConfig, out: Path) -> ComparisonReport:
    seed = cfg.seed
    data = ingest(
        cfg.prices, cfg.indices, cfg.risk_free,
        floor=cfg.floor, clip_threshold=cfg.clip_threshold, required_days=cfg.required_days,
        periods_per_year=cfg.periods_per_year, index_weights=cfg.index_weights,
    )
    stats, ctx, alpha = data.stats, data.ctx, cfg.alpha
    n_assets = stats.n_assets
    n_max = n_assets if cfg.n_max is None else cfg.n_max
    if n_max > n_assets:
        raise ParamOutOfRange(f"n_max {n_max} exceeds the filtered universe of {n_assets}")
    if cfg.n_min > n_max:
        raise ParamOutOfRange(f"n_min {cfg.n_min} exceeds the filtered universe of {n_assets}")
    sizes = list(range(cfg.n_min, n_max + 1))
    log.info("universe of %d assets, sizes %d..%d", n_assets, sizes[0], sizes[-1])

    (out / "filter_report.json").write_text(data.filters.to_json() + "\n")
    _dump_json(stats.to_dict(), out / "stats.json")
    _dump_json(context_to_dict(ctx), out / "context.json")
    all_assets = score_all(stats, ctx, Portfolio(np.ones(n_assets, dtype=bool)), alpha)
    _dump_json(dataclasses.asdict(all_assets), out / "all_assets.json")

    objective = CqnsObjective(stats, alpha)
    rescore = cqns_rescorer(stats, alpha)
    timings: dict[str, float] = {}

    # preliminary GA supplies g for the shift factor
    ga = genetic(objective, n_assets, cfg.ga_config(stage_seed(seed, "ga")), rescore=rescore, method="ga")
    g = ga.cqns
    timings["ga"] = ga.wall_time

    (out / "qubo").mkdir()
    landscapes = n_assets <= cfg.landscape_max_assets or cfg.landscape_sample_budget is not None
    if landscapes:
        (out / "landscape").mkdir()
    shifts, sa_results = {}, []
    for n in sizes:
        q = build_qubo(stats, n, alpha, cfg.mode)
        if cfg.shift:
            sp = shift_factor(g, cfg.m, n, n_assets)
            q = apply_shift(q, sp)
            shifts[str(n)] = sp.s_n
        if cfg.tanh_scale:
            q = tanh_scale(q)
        export_qubo(q, out / "qubo" / f"qubo_n{n:03d}.txt")
        if landscapes:
            budget = None if n_assets <= cfg.landscape_max_assets else cfg.landscape_sample_budget
            land = landscape_profile(q, stats, alpha, budget, seed=stage_seed(seed, f"landscape:{n}"))
            land.to_csv(out / "landscape" / f"landscape_n{n:03d}.csv")
        sa = simulated_anneal(q, cfg.sa_config(stage_seed(seed, f"sa:{n}")), rescore=rescore, workers=cfg.workers)
        sa_results.append(sa)
        timings[f"sa:{n}"] = sa.wall_time

    rand, summary = random_sample(
        objective, n_assets, cfg.random_samples, stage_seed(seed, "random"),
        keep=cfg.star_k, workers=cfg.workers, rescore=rescore,
    )
    timings["random"] = rand.wall_time
    # one entry per size; evaluations count the samples drawn at that size
    random_pool = []
    for size in range(1, n_assets + 1):
        if math.isfinite(summary.size_best[size]):
            mask = Portfolio.from_int(int(summary.size_best_mask[size]), n_assets)
            random_pool.append(SolveResult(mask, float(summary.size_best[size]), rescore(mask), "random",
                                           rand.wall_time, int(summary.size_counts[size])))

    results = [ga, *sa_results, *random_pool]
    if n_assets <= cfg.brute_max_assets:
        brute = brute_force(objective, n_assets, rescore=rescore)
        timings["brute"] = brute.wall_time
        results.append(brute)

    star_pool = list(sa_results) + [ga] + [
        SolveResult(Portfolio.from_int(m, n_assets), v, rescore(Portfolio.from_int(m, n_assets)), "random", 0.0, 1)
        for v, m in summary.best_pool + summary.worst_pool
    ]
    k = max(1, min(cfg.star_k, len(star_pool) // 2))
    stars = star_analysis(star_pool, k, stats.tickers)
    _dump_json(
        {"pool_size": stars.pool_size, "all_stars": stars.all_stars, "dog_stars": stars.dog_stars},
        out / "stars.json",
    )

    seeds: list[Portfolio] = [r.mask for r in sa_results]
    for n in sizes:
        try:
            seeds += heuristic_seed(stars, n, min(cfg.star_extras, n), cap=cfg.seed_cap)
        except InsufficientStars:
            continue
    seeded = genetic(objective, n_assets, cfg.ga_config(stage_seed(seed, "ga_seeded"), seeds),
                     rescore=rescore, method="ga_seeded")
    timings["ga_seeded"] = seeded.wall_time
    results.append(seeded)

    scored = score_results(results, stats, ctx, alpha)
    emit_frontier_csv(scored, out / "frontier.csv")
    write_result_pool(scored, out / "results.csv")
    baseline = SizeBaseline.from_summary(summary)
    # best per size re-scored exactly, matching the random entries in the pool
    baseline.best.update({r.mask.size: r.cqns for r in random_pool if math.isfinite(r.cqns)})
    by_size = compare_by_size(results, baseline)
    write_size_table(by_size, out / "by_size.csv")

    report = ComparisonReport(
        methods=_method_summary(results),
        by_size=by_size,
        frontier=[(s.scores.std_dev, s.scores.expected_return, s.method) for s in scored],
        metadata={
            "seed": seed,
            "alpha": alpha,
            "mode": cfg.mode,
            "shift_applied": cfg.shift,
            "tanh_scale": cfg.tanh_scale,
            "universe": list(stats.tickers),
            "sizes": sizes,
            "g": g,
            "g_source": "ga",
            "m": cfg.m,
            "shift": shifts,
            "random_samples": cfg.random_samples,
            "best_seed_cqns": min((rescore(s) for s in seeds), default=math.nan),
        },
        results=results,
        timings={k: timings[k] for k in sorted(timings)},
    )
    report.validate(stats, alpha)
    _dump_json(report.to_dict(), out / "comparison.json")
    _dump_json(report.timings, out / TIMINGS_FILE)
    return report
