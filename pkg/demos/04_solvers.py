"""Brute force, random sampling, annealing, genetic search and star seeding."""
# %%
import tempfile
from pathlib import Path

from qportfolio.qubo import build_qubo
from qportfolio.scoring import Portfolio
from qportfolio.solvers import (
    CqnsObjective,
    GaConfig,
    QuboObjective,
    SaConfig,
    SolveResult,
    brute_force,
    cqns_rescorer,
    genetic,
    heuristic_seed,
    random_sample,
    simulated_anneal,
    star_analysis,
)
from qportfolio.synthetic import random_stats

stats = random_stats(14, seed=8)
objective = CqnsObjective(stats)
rescore = cqns_rescorer(stats)


def show(r: SolveResult) -> None:
    print(f"{r.method:10s} mask {r.mask.to_hex():>5s} size {r.mask.size:2d} "
          f"cqns {r.cqns:+.6f} evals {r.evaluations:>8d} {r.wall_time:6.3f}s")


# %% [markdown]
# Brute force is the oracle. It enumerates masks in blocks and can checkpoint.

# %%
ckpt = Path(tempfile.mkdtemp()) / "brute.ckpt"
oracle = brute_force(objective, 14, ckpt, checkpoint_every=4096, rescore=rescore)
show(oracle)
print("checkpoint:", ckpt.read_text().strip())

# %% [markdown]
# Random sampling draws uniform bitstrings and also keeps per-size statistics.

# %%
rand, summary = random_sample(objective, 14, 50_000, seed=1, keep=32, rescore=rescore)
show(rand)
print("size fractions", summary.size_fraction.round(3))

# %% [markdown]
# Annealing works on a QUBO. Here it is the exact alpha = 0 QUBO at the oracle's size.
# Its minimum need not match the alpha = 1 CQNS optimum, so the QUBO oracle is shown too.

# %%
q = build_qubo(stats, oracle.mask.size, alpha=0.0, mode="exact_alpha0")
show(simulated_anneal(q, SaConfig(steps=5000, restarts=20, seed=2), rescore=rescore))
show(brute_force(QuboObjective(q), 14, rescore=rescore, method="qubo-brute"))

# %% [markdown]
# Genetic search on the CQNS itself, then star analysis and a seeded rerun.

# %%
ga = genetic(objective, 14, GaConfig(population=64, generations=15, seed=3), rescore=rescore)
show(ga)
pool = [SolveResult(Portfolio.from_int(m, 14), v, v, "random", 0.0, 1)
        for v, m in summary.best_pool + summary.worst_pool]
report = star_analysis(pool, 32, stats.tickers)
print("all-stars", report.all_stars[:5])
print("dog-stars", report.dog_stars[:5])
seeds = []
for n in range(2, 10):
    seeds += heuristic_seed(report, n, 1, cap=8)
seeded = genetic(objective, 14, GaConfig(population=64, generations=15, seed=3, seeds=tuple(seeds[:64])),
                 rescore=rescore, method="ga_seeded")
show(seeded)
