"""Classical minimizers for portfolio objectives and QUBO instances.

Objectives are batch callables mapping a (B, N) boolean mask stack to B
values. Every solver returns a SolveResult; when a ``rescore`` callable is
given the result also carries the exact CQNS of the chosen mask.
"""
from __future__ import annotations

import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numba
import numpy as np

from .errors import (
    BudgetExceeded,
    DomainError,
    InsufficientPool,
    InsufficientStars,
    IoError,
    MalformedData,
    ParamOutOfRange,
)
from .marketdata import ReturnStats
from .qubo import QuboMatrix, masks_from_ints, masks_to_ints, qubo_energy_batch
from .scoring import DEFAULT_ALPHA, Portfolio, cqns, cqns_batch

BRUTE_FORCE_CAP = 26
BLOCK = 1 << 16


class QuboObjective:
    def __init__(self, q: QuboMatrix):
        self.q = q
        self.n_assets = q.n_assets

    def __call__(self, masks) -> np.ndarray:
        return qubo_energy_batch(self.q, masks)


class CqnsObjective:
    def __init__(self, stats: ReturnStats, alpha: float = DEFAULT_ALPHA):
        self.stats = stats
        self.alpha = alpha
        self.n_assets = stats.n_assets

    def __call__(self, masks) -> np.ndarray:
        return cqns_batch(self.stats, masks, self.alpha)


def cqns_rescorer(stats: ReturnStats, alpha: float = DEFAULT_ALPHA) -> Callable[[Portfolio], float]:
    def rescore(p: Portfolio) -> float:
        try:
            return cqns(stats, p, alpha)
        except DomainError:
            return math.nan
    return rescore


def _clean(values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.where(np.isnan(v), np.inf, v)


@dataclass
class SolveResult:
    mask: Portfolio
    energy: float
    cqns: float
    method: str
    wall_time: float
    evaluations: int
    history: np.ndarray | None = field(default=None, repr=False)

    def key(self) -> tuple[float, int]:
        return (self.energy, self.mask.to_int())

    def same_outcome(self, other: "SolveResult") -> bool:
        """Equality ignoring wall time."""
        return (
            self.mask == other.mask
            and self.energy == other.energy
            and (self.cqns == other.cqns or (math.isnan(self.cqns) and math.isnan(other.cqns)))
            and self.method == other.method
            and self.evaluations == other.evaluations
        )


def _result(mask, energy, method, started, evaluations, rescore, history=None) -> SolveResult:
    p = mask if isinstance(mask, Portfolio) else Portfolio(mask)
    score = rescore(p) if rescore is not None else math.nan
    return SolveResult(p, float(energy), float(score), method, time.perf_counter() - started, int(evaluations), history)


# -- brute force --------------------------------------------------------------

def _read_checkpoint(path: Path, n_assets: int):
    parts = path.read_text().split()
    if len(parts) != 3:
        raise MalformedData(f"{path}: checkpoint needs 3 fields")
    last = int(parts[0])
    if not 0 <= last < (1 << n_assets):
        raise MalformedData(f"{path}: mask index {last} outside a {n_assets}-asset universe")
    return last, int(parts[1], 16), float(parts[2])


def _write_checkpoint(path: Path, last: int, mask: int, energy: float) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(f"{last} {mask:x} {energy!r}\n")
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def brute_force(
    objective,
    n_assets: int,
    checkpoint=None,
    *,
    max_assets: int = BRUTE_FORCE_CAP,
    checkpoint_every: int = 1 << 20,
    progress: Callable[[int], None] | None = None,
    rescore=None,
    method: str = "brute",
) -> SolveResult:
    """Exact minimum over all 2^N - 1 non-empty masks, enumerated in binary order.

    Memory stays constant: masks are generated block by block. With a
    ``checkpoint`` path the state ``<last index> <incumbent hex> <energy>`` is
    rewritten atomically every ``checkpoint_every`` masks and an existing file
    is resumed from. ``progress`` is called with the last evaluated index after
    each checkpoint write.
    """
    if n_assets < 1:
        raise ParamOutOfRange("universe must hold at least one asset")
    if n_assets > max_assets:
        raise BudgetExceeded(f"{n_assets} assets exceeds the brute-force cap of {max_assets}")
    started = time.perf_counter()
    total = (1 << n_assets) - 1
    path = Path(checkpoint) if checkpoint is not None else None
    last, best_mask, best_val = 0, 0, math.inf
    if path is not None and path.exists():
        last, best_mask, best_val = _read_checkpoint(path, n_assets)
    block = min(BLOCK, max(checkpoint_every, 1))
    since_checkpoint = 0
    while last < total:
        stop = min(last + block, total)
        ints = np.arange(last + 1, stop + 1, dtype=np.int64)
        values = _clean(objective(masks_from_ints(ints, n_assets)))
        i = int(np.argmin(values))
        if values[i] < best_val:
            best_val, best_mask = float(values[i]), int(ints[i])
        since_checkpoint += stop - last
        last = stop
        if path is not None and (since_checkpoint >= checkpoint_every or last == total):
            _write_checkpoint(path, last, best_mask, best_val)
            since_checkpoint = 0
            if progress is not None:
                progress(last)
    return _result(Portfolio.from_int(best_mask, n_assets), best_val, method, started, total, rescore)


# -- random sampling ----------------------------------------------------------

@dataclass
class SampleSummary:
    """Per-size statistics of a random-sampling run plus its best/worst pools."""

    size_counts: np.ndarray
    size_valid: np.ndarray
    size_sum: np.ndarray
    size_best: np.ndarray
    size_best_mask: np.ndarray
    best_pool: list[tuple[float, int]]
    worst_pool: list[tuple[float, int]]

    @property
    def size_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.size_valid > 0, self.size_sum / np.maximum(self.size_valid, 1), np.nan)

    @property
    def size_fraction(self) -> np.ndarray:
        return self.size_counts / self.size_counts.sum()


def _draw_nonempty(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    x = rng.integers(0, 2, size=(count, n), dtype=np.uint8).astype(bool)
    empty = ~x.any(axis=1)
    while empty.any():
        x[empty] = rng.integers(0, 2, size=(int(empty.sum()), n), dtype=np.uint8).astype(bool)
        empty = ~x.any(axis=1)
    return x


def _distinct(pairs, keep: int, worst: bool = False) -> list[tuple[float, int]]:
    """The ``keep`` best (or worst) (value, mask) pairs with each mask at most once."""
    if worst:
        ranked = sorted(pairs, key=lambda vm: (-vm[0], -vm[1]))
    else:
        ranked = sorted(pairs)
    out, seen = [], set()
    for value, mask in ranked:
        if len(out) == keep:
            break
        if mask not in seen:
            seen.add(mask)
            out.append((value, mask))
    return out


def _sample_chunk(objective, n, seed, index, count, keep):
    rng = np.random.default_rng([seed, index])
    x = _draw_nonempty(rng, count, n)
    values = _clean(objective(x))
    ints = masks_to_ints(x)
    sizes = x.sum(axis=1)
    counts = np.bincount(sizes, minlength=n + 1)
    finite = np.isfinite(values)
    sums = np.bincount(sizes[finite], weights=values[finite], minlength=n + 1)
    best = np.full(n + 1, np.inf)
    best_mask = np.zeros(n + 1, dtype=np.int64)
    valid = np.bincount(sizes[finite], minlength=n + 1)
    order = np.lexsort((ints, values))
    present, first = np.unique(sizes[order], return_index=True)
    best[present], best_mask[present] = values[order[first]], ints[order[first]]
    pairs = [(float(values[j]), int(ints[j])) for j in order]
    top = _distinct(pairs, keep)
    bottom = _distinct([vm for vm in pairs if math.isfinite(vm[0])], keep, worst=True)
    incumbent = (float(values[order[0]]), int(ints[order[0]]))
    return counts, valid, sums, best, best_mask, top, bottom, incumbent


def random_sample(
    objective,
    n_assets: int,
    samples: int,
    seed: int = 0,
    *,
    keep: int = 0,
    workers: int = 1,
    rescore=None,
    method: str = "random",
) -> tuple[SolveResult, SampleSummary]:
    """Uniform sampling over non-empty bitstrings (empty draws are redrawn).

    Draws are split into fixed chunks with independent streams keyed by
    (seed, chunk index), so the outcome does not depend on ``workers``.
    ``keep`` retains that many best and worst (value, mask) pairs, each mask
    at most once.
    """
    if samples < 1:
        raise ParamOutOfRange("samples must be at least 1")
    if n_assets > 62:
        raise ParamOutOfRange("random sampling supports at most 62 assets")
    started = time.perf_counter()
    n = n_assets
    chunks = [(i, min(BLOCK, samples - i * BLOCK)) for i in range(math.ceil(samples / BLOCK))]

    def run(chunk):
        return _sample_chunk(objective, n, seed, chunk[0], chunk[1], keep)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]

    counts = np.zeros(n + 1, dtype=np.int64)
    valid = np.zeros(n + 1, dtype=np.int64)
    sums = np.zeros(n + 1)
    best = np.full(n + 1, np.inf)
    best_mask = np.zeros(n + 1, dtype=np.int64)
    top, bottom = [], []
    incumbent = (math.inf, 0)
    for c, v, s, b, bm, t, w, inc in parts:
        counts += c
        valid += v
        sums += s
        for size in range(n + 1):
            if (b[size], bm[size]) < (best[size], best_mask[size]) or (best[size] == np.inf and b[size] < np.inf):
                best[size], best_mask[size] = b[size], bm[size]
        top = _distinct(top + t, keep)
        bottom = _distinct(bottom + w, keep, worst=True)
        incumbent = min(incumbent, inc)
    summary = SampleSummary(counts, valid, sums, best, best_mask, top, bottom)
    result = _result(Portfolio.from_int(incumbent[1], n), incumbent[0], method, started, samples, rescore)
    return result, summary


# -- simulated annealing ------------------------------------------------------

@dataclass(frozen=True)
class SaConfig:
    """Geometric-cooling single-flip annealer settings.

    ``initial_temp=None`` uses the largest possible single-flip energy change;
    ``cooling_rate=None`` cools to 1e-5 of the start over ``steps``.
    """

    initial_temp: float | None = None
    cooling_rate: float | None = None
    steps: int = 5000
    restarts: int = 20
    seed: int = 0
    record_history: bool = False

    def __post_init__(self):
        if self.steps < 1 or self.restarts < 1:
            raise ParamOutOfRange("steps and restarts must be at least 1")
        if self.cooling_rate is not None and not 0 < self.cooling_rate < 1:
            raise ParamOutOfRange(f"cooling rate {self.cooling_rate} outside (0, 1)")
        if self.initial_temp is not None and not (self.initial_temp >= 0 and math.isfinite(self.initial_temp)):
            raise ParamOutOfRange("initial temperature must be finite and non-negative")


@numba.njit(cache=True, nogil=True)
def _anneal_kernel(diag, pair, x, flips, uniforms, t0, rate, history):
    n = x.size
    h = np.zeros(n)
    for i in range(n):
        if x[i]:
            for j in range(n):
                h[j] += pair[j, i]
    energy = 0.0
    count = 0
    for i in range(n):
        if x[i]:
            energy += diag[i] + 0.5 * h[i]
            count += 1
    best = energy
    best_x = x.copy()
    t = t0
    record = history.size > 0
    for s in range(flips.size):
        k = flips[s]
        sign = 1.0 - 2.0 * x[k]
        if not (sign < 0 and count == 1):
            delta = sign * (diag[k] + h[k])
            if delta <= 0.0 or (t > 0.0 and uniforms[s] < math.exp(-delta / t)):
                x[k] = 1.0 - x[k]
                count += 1 if sign > 0 else -1
                for j in range(n):
                    h[j] += sign * pair[j, k]
                energy += delta
                if energy < best:
                    best = energy
                    best_x[:] = x
        if record:
            history[s] = energy
        t *= rate
    return energy, best, best_x


def _auto_temperature(q: QuboMatrix) -> float:
    swing = np.abs(q.linear) + np.abs(q.couplings()).sum(axis=1)
    t = float(swing.max()) if swing.size else 0.0
    return t if t > 0 else 1.0


def _anneal_once(q: QuboMatrix, cfg: SaConfig, restart: int, t0: float, rate: float):
    n = q.n_assets
    rng = np.random.default_rng([cfg.seed, restart])
    x = _draw_nonempty(rng, 1, n)[0].astype(float)
    flips = rng.integers(0, n, size=cfg.steps)
    uniforms = rng.random(cfg.steps)
    history = np.empty(cfg.steps if cfg.record_history else 0)
    final, best, best_x = _anneal_kernel(
        np.ascontiguousarray(q.linear), q.couplings(), x, flips, uniforms, t0, rate, history
    )
    return final, best, best_x.astype(bool), history


def simulated_anneal(q: QuboMatrix, cfg: SaConfig = SaConfig(), *, rescore=None, workers: int = 1, method: str = "sa") -> SolveResult:
    """Single-bit-flip annealing with incremental energy updates.

    Moves that would empty the portfolio are rejected. Each restart draws its
    own stream from (seed, restart index); the best mask over all restarts is
    returned, ties broken by the smaller mask integer.
    """
    if not isinstance(cfg, SaConfig):
        raise ParamOutOfRange("cfg must be an SaConfig")
    started = time.perf_counter()
    t0 = _auto_temperature(q) if cfg.initial_temp is None else float(cfg.initial_temp)
    rate = cfg.cooling_rate if cfg.cooling_rate is not None else 1e-5 ** (1.0 / cfg.steps)

    def run(r):
        return _anneal_once(q, cfg, r, t0, rate)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            runs = list(ex.map(run, range(cfg.restarts)))
    else:
        runs = [run(r) for r in range(cfg.restarts)]
    best_energy, best_mask = runs[0][1], runs[0][2]
    for _, best, bx, _ in runs[1:]:
        if best < best_energy or (best == best_energy and _lex_less(bx, best_mask)):
            best_energy, best_mask = best, bx
    history = np.stack([h for *_, h in runs]) if cfg.record_history else None
    best_energy = float(qubo_energy_batch(q, best_mask[None, :])[0])
    evaluations = cfg.restarts * (cfg.steps + 1)
    return _result(best_mask, best_energy, method, started, evaluations, rescore, history)


def _lex_less(a: np.ndarray, b: np.ndarray) -> bool:
    """Order masks by their integer value (bit i = asset i)."""
    diff = np.flatnonzero(a != b)
    return bool(diff.size) and not a[diff[-1]]


# -- genetic algorithm --------------------------------------------------------

@dataclass(frozen=True)
class GaConfig:
    """Genetic search settings.

    Each generation keeps the top ``max(1, round(elitism_prob * population))``
    individuals unchanged; the rest are children of tournament-selected parents
    built by uniform crossover and per-bit mutation (default rate 1/N).
    """

    population: int = 256
    generations: int = 200
    elitism_prob: float = 0.1
    mutation_prob: float | None = None
    tournament: int = 3
    seeds: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ParamOutOfRange("population must be at least 2")
        if self.generations < 0:
            raise ParamOutOfRange("generations must be non-negative")
        if not 0 <= self.elitism_prob <= 1:
            raise ParamOutOfRange("elitism_prob must lie in [0, 1]")
        if self.mutation_prob is not None and not 0 <= self.mutation_prob <= 1:
            raise ParamOutOfRange("mutation_prob must lie in [0, 1]")
        if self.tournament < 1:
            raise ParamOutOfRange("tournament size must be at least 1")


def _seed_array(seeds, n: int) -> np.ndarray:
    rows = [s.mask if isinstance(s, Portfolio) else np.asarray(s, dtype=bool).ravel() for s in seeds]
    for r in rows:
        if r.size != n:
            raise MalformedData(f"seed mask has {r.size} entries, universe has {n}")
        if not r.any():
            raise MalformedData("seed masks must be non-empty")
    return np.array(rows, dtype=bool).reshape(len(rows), n)


def _repair_empty(x: np.ndarray, rng: np.random.Generator) -> None:
    empty = np.flatnonzero(~x.any(axis=1))
    if empty.size:
        x[empty, rng.integers(0, x.shape[1], size=empty.size)] = True


def genetic(objective, n_assets: int, cfg: GaConfig = GaConfig(), *, rescore=None, method: str = "ga") -> SolveResult:
    """Elitist genetic search; never returns anything worse than its best seed."""
    if not isinstance(cfg, GaConfig):
        raise ParamOutOfRange("cfg must be a GaConfig")
    started = time.perf_counter()
    n = n_assets
    rng = np.random.default_rng(cfg.seed)
    seeds = _seed_array(cfg.seeds, n)
    if seeds.shape[0] > cfg.population:
        seed_vals = _clean(objective(seeds))
        seeds = seeds[np.argsort(seed_vals, kind="stable")[: cfg.population]]
    pop = np.vstack([seeds, _draw_nonempty(rng, cfg.population - seeds.shape[0], n)])
    fit = _clean(objective(pop))
    evaluations = pop.shape[0]
    n_elite = min(cfg.population, max(1, round(cfg.elitism_prob * cfg.population)))
    n_child = cfg.population - n_elite
    pm = cfg.mutation_prob if cfg.mutation_prob is not None else 1.0 / n

    for _ in range(cfg.generations):
        order = np.argsort(fit, kind="stable")
        elite, elite_fit = pop[order[:n_elite]], fit[order[:n_elite]]
        if n_child:
            contenders = rng.integers(0, cfg.population, size=(2 * n_child, cfg.tournament))
            winners = contenders[np.arange(2 * n_child), np.argmin(fit[contenders], axis=1)]
            pa, pb = pop[winners[:n_child]], pop[winners[n_child:]]
            child = np.where(rng.random((n_child, n)) < 0.5, pa, pb)
            child ^= rng.random((n_child, n)) < pm
            _repair_empty(child, rng)
            child_fit = _clean(objective(child))
            evaluations += n_child
            pop = np.vstack([elite, child])
            fit = np.concatenate([elite_fit, child_fit])
        else:
            pop, fit = elite, elite_fit

    i = int(np.argsort(fit, kind="stable")[0])
    return _result(pop[i], fit[i], method, started, evaluations, rescore)


# -- all-star / dog-star heuristic --------------------------------------------

@dataclass(frozen=True)
class StarReport:
    all_stars: list[tuple[str, float]]
    dog_stars: list[tuple[str, float]]
    pool_size: int
    labels: tuple[str, ...]
    best_freq: np.ndarray
    worst_freq: np.ndarray

    @property
    def n_assets(self) -> int:
        return len(self.labels)


def _ranked(freq: np.ndarray, labels) -> list[tuple[str, float]]:
    order = sorted(np.flatnonzero(freq > 0), key=lambda i: (-freq[i], i))
    return [(labels[i], float(freq[i])) for i in order]


def star_analysis(pool: Sequence[SolveResult], k: int, tickers: Sequence[str] | None = None) -> StarReport:
    """Inclusion frequencies among the k best and k worst results by CQNS.

    Results without a CQNS (NaN) are ranked by their energy instead.
    """
    if k < 1 or len(pool) < 2 * k:
        raise InsufficientPool(f"need at least {2 * k} results for k={k}, got {len(pool)}")
    n = pool[0].mask.n_assets
    labels = tuple(tickers) if tickers is not None else tuple(str(i) for i in range(n))
    if len(labels) != n:
        raise MalformedData("ticker count does not match mask length")

    def score(r: SolveResult):
        value = r.cqns if not math.isnan(r.cqns) else r.energy
        return (value, r.mask.to_int())

    ranked = sorted(pool, key=score)
    best = np.array([r.mask.mask for r in ranked[:k]], dtype=float).mean(axis=0)
    worst = np.array([r.mask.mask for r in ranked[-k:]], dtype=float).mean(axis=0)
    return StarReport(_ranked(best, labels), _ranked(worst, labels), k, labels, best, worst)


def heuristic_seed(
    report: StarReport,
    target_size: int,
    extras: int,
    *,
    cap: int = 256,
    exclude: Sequence[str] | None = None,
) -> list[Portfolio]:
    """Top (n - extras) all-stars plus every combination of ``extras`` other assets.

    Candidates for the extra slots skip the core and the excluded dog-stars;
    by default a dog-star is excluded when it shows up more often in the worst
    pool than in the best pool.
    """
    n_assets = report.n_assets
    if not report.all_stars:
        raise InsufficientStars("no all-stars in the report")
    if not 1 <= target_size <= n_assets or extras < 0 or extras > target_size:
        raise ParamOutOfRange(f"cannot build size-{target_size} seeds with {extras} extras")
    core_len = target_size - extras
    if core_len > len(report.all_stars):
        raise InsufficientStars(f"need {core_len} all-stars, report has {len(report.all_stars)}")
    index = {label: i for i, label in enumerate(report.labels)}
    core = [index[label] for label, _ in report.all_stars[:core_len]]
    if exclude is None:
        dogs = {i for i in range(n_assets) if report.worst_freq[i] > report.best_freq[i]}
    else:
        dogs = {index[label] for label in exclude}
    candidates = [i for i in range(n_assets) if i not in core and i not in dogs]
    out = []
    for combo in itertools.combinations(candidates, extras):
        if len(out) >= cap:
            break
        chosen = core + list(combo)
        if chosen:
            out.append(Portfolio.from_indices(chosen, n_assets))
    return out
