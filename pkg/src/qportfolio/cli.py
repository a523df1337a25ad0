"""Command-line entry point: ``qportfolio <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import harness
from .errors import MalformedData, PortfolioError
from .marketdata import MarketContext, ReturnStats
from .qubo import (
    MODES,
    apply_shift,
    build_qubo,
    export_qubo,
    import_qubo,
    landscape_profile,
    shift_factor,
    tanh_scale,
)
from .scoring import DEFAULT_ALPHA, Portfolio, ScoreSet, score_all
from .solvers import (
    CqnsObjective,
    GaConfig,
    QuboObjective,
    SaConfig,
    brute_force,
    cqns_rescorer,
    genetic,
    random_sample,
    simulated_anneal,
)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MalformedData(f"cannot read {path}: {exc}") from exc


def _load_stats(path) -> ReturnStats:
    return ReturnStats.from_dict(_read_json(path))


def _load_context(path) -> MarketContext:
    if path is None:
        return MarketContext((0.0,), 0.0, 0.0, 0.0)
    return harness.context_from_dict(_read_json(path))


def _result_json(r) -> str:
    return json.dumps({
        "method": r.method,
        "mask_hex": r.mask.to_hex(),
        "size": r.mask.size,
        "energy": r.energy,
        "cqns": None if math.isnan(r.cqns) else r.cqns,
        "evaluations": r.evaluations,
        "wall_time": r.wall_time,
    })


def cmd_ingest(args) -> None:
    data = harness.ingest(
        args.prices, args.indices, args.risk_free,
        floor=args.floor, clip_threshold=args.clip_threshold, required_days=args.required_days,
        periods_per_year=args.periods_per_year, index_weights=args.index_weights,
    )
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.json").write_text(json.dumps(data.stats.to_dict(), indent=2) + "\n")
    (out / "context.json").write_text(json.dumps(harness.context_to_dict(data.ctx), indent=2) + "\n")
    (out / "filter_report.json").write_text(data.filters.to_json() + "\n")
    print(json.dumps({"kept": len(data.filters.kept), "removed": len(data.filters.removed), "output": str(out)}))


def cmd_score(args) -> None:
    stats = _load_stats(args.stats)
    ctx = _load_context(args.context)
    if args.all:
        masks = [Portfolio(np.ones(stats.n_assets, dtype=bool))]
    else:
        masks = [Portfolio.from_hex(h, stats.n_assets) for h in args.mask]
    scores = [score_all(stats, ctx, m, args.alpha) for m in masks]
    if args.csv:
        print(",".join(ScoreSet.CSV_COLUMNS))
        for s in scores:
            print(",".join(s.csv_row()))
    else:
        for s in scores:
            print(json.dumps(json.loads(s.to_json())))


def _compile(stats, n, args):
    q = build_qubo(stats, n, args.alpha, args.mode)
    if args.g is not None:
        q = apply_shift(q, shift_factor(args.g, args.m, n, stats.n_assets))
    if args.tanh:
        q = tanh_scale(q)
    return q


def cmd_build_qubo(args) -> None:
    stats = _load_stats(args.stats)
    n_max = stats.n_assets if args.n_max is None else args.n_max
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for n in range(args.n_min, n_max + 1):
        path = out / f"qubo_n{n:03d}.txt"
        export_qubo(_compile(stats, n, args), path)
        written.append(str(path))
    print(json.dumps({"written": written}))


def cmd_export_qubo(args) -> None:
    stats = _load_stats(args.stats)
    export_qubo(_compile(stats, args.size, args), args.output)
    print(json.dumps({"written": str(args.output)}))


def cmd_landscape(args) -> None:
    q = import_qubo(args.qubo)
    stats = _load_stats(args.stats)
    land = landscape_profile(q, stats, args.alpha, args.sample_budget, seed=args.seed)
    land.to_csv(args.output)
    print(json.dumps({"rows": len(land), "output": str(args.output)}))


def cmd_solve(args) -> None:
    stats = _load_stats(args.stats) if args.stats else None
    q = import_qubo(args.qubo) if args.qubo else None
    if q is None and stats is None:
        raise MalformedData("solve needs --qubo or --stats")
    rescore = cqns_rescorer(stats, args.alpha) if stats is not None else None
    objective = QuboObjective(q) if q is not None else CqnsObjective(stats, args.alpha)
    n = objective.n_assets
    if args.method == "brute":
        r = brute_force(objective, n, args.checkpoint, max_assets=args.max_assets, rescore=rescore)
    elif args.method == "random":
        r, _ = random_sample(objective, n, args.samples, args.seed, workers=args.workers, rescore=rescore)
    elif args.method == "sa":
        if q is None:
            raise MalformedData("simulated annealing needs --qubo")
        cfg = SaConfig(args.initial_temp, args.cooling_rate, args.steps, args.restarts, args.seed)
        r = simulated_anneal(q, cfg, rescore=rescore, workers=args.workers)
    else:
        seeds = tuple(Portfolio.from_hex(h, n) for h in args.seed_mask or ())
        cfg = GaConfig(args.population, args.generations, args.elitism_prob, args.mutation_prob,
                       seeds=seeds, seed=args.seed)
        r = genetic(objective, n, cfg, rescore=rescore)
    print(_result_json(r))


def cmd_run(args) -> None:
    overrides = {
        "seed": args.seed, "workers": args.workers, "output": args.output, "alpha": args.alpha,
        "m": args.m, "n_min": args.n_min, "n_max": args.n_max, "mode": args.mode,
    }
    if args.config:
        cfg = harness.load_config(args.config, **overrides)
    else:
        cfg = harness.ExperimentConfig.bundled(
            args.output or "qportfolio-out", **{k: v for k, v in overrides.items() if v is not None and k != "output"}
        )
    report = harness.run_experiment(cfg)
    print(json.dumps({"output": str(cfg.output), "methods": report.methods}))


def cmd_compare(args) -> None:
    results = harness.read_result_pool(args.results)
    baseline = harness.read_result_pool(args.baseline)
    rows = harness.compare_by_size(results, baseline)
    if args.output:
        harness.write_size_table(rows, args.output)
    else:
        print(",".join(harness.SizeRow.COLUMNS))
        for r in rows:
            print(",".join(r.csv_row()))


def _weights(text: str):
    return tuple(float(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qportfolio", description="CQNS portfolio selection via QUBO compilation.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="compute filtered, repaired statistics from CSV files")
    s.add_argument("--prices", required=True)
    s.add_argument("--indices", required=True)
    s.add_argument("--risk-free", required=True)
    s.add_argument("--floor", type=float, default=0.0)
    s.add_argument("--clip-threshold", type=float, default=1e-6)
    s.add_argument("--required-days", type=int, default=253)
    s.add_argument("--periods-per-year", type=int, default=252)
    s.add_argument("--index-weights", type=_weights)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("score", help="score portfolios given as hex masks")
    s.add_argument("--stats", required=True)
    s.add_argument("--context")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--mask", action="append")
    g.add_argument("--all", action="store_true", help="score the equal-weight all-asset portfolio")
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.add_argument("--csv", action="store_true")
    s.set_defaults(func=cmd_score)

    def qubo_flags(s):
        s.add_argument("--stats", required=True)
        s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
        s.add_argument("--mode", choices=MODES, default="exact_alpha0")
        s.add_argument("--g", type=float, help="best classical score; enables the shift")
        s.add_argument("--m", type=float, default=5.0)
        s.add_argument("--tanh", action="store_true")

    s = sub.add_parser("build-qubo", help="write one QUBO file per portfolio size")
    qubo_flags(s)
    s.add_argument("--n-min", type=int, default=2)
    s.add_argument("--n-max", type=int)
    s.add_argument("--output", required=True, help="directory")
    s.set_defaults(func=cmd_build_qubo)

    s = sub.add_parser("export-qubo", help="write the QUBO for a single portfolio size")
    qubo_flags(s)
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--output", required=True, help="file")
    s.set_defaults(func=cmd_export_qubo)

    s = sub.add_parser("landscape", help="energy vs size profile of a QUBO file")
    s.add_argument("--qubo", required=True)
    s.add_argument("--stats", required=True)
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.add_argument("--sample-budget", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_landscape)

    s = sub.add_parser("solve", help="minimize a QUBO file or the CQNS directly")
    s.add_argument("--method", choices=("brute", "random", "sa", "ga"), required=True)
    s.add_argument("--qubo")
    s.add_argument("--stats")
    s.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--checkpoint")
    s.add_argument("--max-assets", type=int, default=26)
    s.add_argument("--samples", type=int, default=100_000)
    s.add_argument("--steps", type=int, default=5000)
    s.add_argument("--restarts", type=int, default=20)
    s.add_argument("--initial-temp", type=float)
    s.add_argument("--cooling-rate", type=float)
    s.add_argument("--population", type=int, default=256)
    s.add_argument("--generations", type=int, default=200)
    s.add_argument("--elitism-prob", type=float, default=0.1)
    s.add_argument("--mutation-prob", type=float)
    s.add_argument("--seed-mask", action="append", help="hex mask seeding the GA (repeatable)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("run", help="full experiment workflow")
    s.add_argument("--config", help="INI config; defaults to the bundled synthetic dataset")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--output")
    s.add_argument("--alpha", type=float)
    s.add_argument("--m", type=float)
    s.add_argument("--n-min", type=int)
    s.add_argument("--n-max", type=int)
    s.add_argument("--mode", choices=MODES)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("compare", help="per-size comparison of result pools against a baseline pool")
    s.add_argument("--results", required=True)
    s.add_argument("--baseline", required=True)
    s.add_argument("--output")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (PortfolioError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0
