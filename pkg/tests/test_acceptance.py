"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The lines are printed as they happen and collected again in the terminal
summary.
"""
import math
import time
import tracemalloc

import numpy as np
import pytest
from scipy import stats as sps
from scipy.special import comb

from qportfolio.harness import BUNDLED_DATA, ingest, load_config, run_experiment
from qportfolio.marketdata import cholesky_succeeds, repair_psd
from qportfolio.qubo import (
    QuboMatrix,
    apply_shift,
    build_qubo,
    import_qubo,
    masks_from_ints,
    qubo_energy_batch,
    shift_factor,
    tanh_scale,
    to_ising,
)
from qportfolio.scoring import cqns
from qportfolio.solvers import (
    CqnsObjective,
    GaConfig,
    QuboObjective,
    SaConfig,
    brute_force,
    genetic,
    random_sample,
    simulated_anneal,
)
from qportfolio.synthetic import make_dataset, random_stats

from conftest import ACCEPTANCE_LINES


def record(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def all_masks(n):
    return masks_from_ints(np.arange(1 << n), n)


def tree(path):
    return {
        str(p.relative_to(path)): p.read_bytes()
        for p in sorted(path.rglob("*"))
        if p.is_file() and p.name != "timings.json"
    }


def test_qubo_exactness():
    started = time.perf_counter()
    worst, checked = 0.0, 0
    masks = all_masks(12)
    sizes = masks.sum(axis=1)
    for universe in range(5):
        s = random_stats(12, seed=100 + universe)
        expected = {int(v): cqns(s, masks[v], 0.0) for v in range(1, 1 << 12)}
        for n in range(2, 13):
            q = build_qubo(s, n, alpha=0.0, mode="exact_alpha0")
            idx = np.flatnonzero(sizes == n)
            energy = qubo_energy_batch(q, masks[idx])
            err = np.abs(energy - np.array([expected[int(i)] for i in idx]))
            worst = max(worst, float(err.max()))
            checked += idx.size
    elapsed = time.perf_counter() - started
    record("qubo-exactness", worst <= 1e-9 and elapsed < 10,
           f"{checked} (universe, size, mask) checks, max |E - CQNS| = {worst:.2e}, {elapsed:.1f}s")


def test_ising_identity():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(1, 11))
        q = QuboMatrix(np.triu(rng.normal(size=(n, n))), 2)
        model = to_ising(q)
        a, b = model.affine
        x = all_masks(n).astype(float)
        z = a * x + b
        ising = np.einsum("bi,ij,bj->b", z, model.couplings, z) + z @ model.field + model.offset
        worst = max(worst, float(np.max(np.abs(ising - qubo_energy_batch(q, x)))))
    elapsed = time.perf_counter() - started
    record("ising-identity", worst <= 1e-9 and elapsed < 10,
           f"100 random QUBOs (N <= 10), max deviation {worst:.2e}, {elapsed:.1f}s")


def test_shift_argmin_invariance():
    masks = all_masks(12)
    sizes = masks.sum(axis=1)
    ok, worst, cases = True, 0.0, 0
    for mode in ("exact_alpha0", "paper"):
        s = random_stats(12, seed=31)
        for n in range(2, 13):
            sel = masks[sizes == n]
            q = build_qubo(s, n, 1.0, mode)
            base = qubo_energy_batch(q, sel)
            for g in (-0.02, 0.003, 0.5):
                shifted = qubo_energy_batch(apply_shift(q, shift_factor(g, 5.0, n, 12)), sel)
                diff = shifted - base
                worst = max(worst, float(diff.max() - diff.min()))
                ok &= int(np.argmin(base)) == int(np.argmin(shifted))
                cases += 1
    record("shift-argmin-invariance", ok and worst <= 1e-9,
           f"{cases} (mode, size, g) cases, argmin unchanged={ok}, constant spread {worst:.2e}")


def test_size_distribution():
    started = time.perf_counter()
    _, summary = random_sample(lambda m: np.zeros(len(m)), 40, 1_000_000, seed=40)
    elapsed = time.perf_counter() - started
    exact = comb(40, 20, exact=True) / 2**40
    observed = float(summary.size_fraction[20])
    # chi-square against Binomial(40, 1/2) without the empty mask, sparse tails pooled
    p = np.array([comb(40, k, exact=True) for k in range(41)], dtype=float) / (2.0**40 - 1)
    p[0] = 0.0
    counts = summary.size_counts.astype(float)
    lo, hi = 8, 32
    obs = np.concatenate([[counts[:lo].sum()], counts[lo:hi + 1], [counts[hi + 1:].sum()]])
    exp = np.concatenate([[p[:lo].sum()], p[lo:hi + 1], [p[hi + 1:].sum()]]) * counts.sum()
    pvalue = float(sps.chisquare(obs, exp).pvalue)
    ok = abs(observed - exact) <= 0.01 and elapsed < 30 and pvalue > 0.001
    record("size-distribution", ok,
           f"P(size=20) = {observed:.5f} vs exact {exact:.5f}, chi-square p = {pvalue:.3f}, {elapsed:.1f}s")


def test_solver_vs_oracle():
    started = time.perf_counter()
    sa_hits = ga_hits = 0
    for trial in range(20):
        s = random_stats(12, seed=500 + trial)
        q = build_qubo(s, 2 + trial % 10, alpha=0.0, mode="exact_alpha0")
        objective = QuboObjective(q)
        oracle = brute_force(objective, 12)
        sa = simulated_anneal(q, SaConfig(steps=5000, restarts=20, seed=trial))
        ga = genetic(objective, 12, GaConfig(population=256, generations=200, seed=trial))
        sa_hits += sa.mask == oracle.mask
        ga_hits += ga.mask == oracle.mask
    elapsed = time.perf_counter() - started
    ok = sa_hits >= 19 and ga_hits >= 18 and elapsed < 120
    record("solver-vs-oracle", ok, f"SA {sa_hits}/20 (need 19), GA {ga_hits}/20 (need 18), {elapsed:.1f}s")


def test_seed_monotonicity():
    rng = np.random.default_rng(77)
    violations = 0
    for trial in range(100):
        n = int(rng.integers(2, 16))
        if trial % 2:
            objective = CqnsObjective(random_stats(n, seed=trial), alpha=float(rng.uniform(0, 2)))
        else:
            objective = QuboObjective(QuboMatrix(np.triu(rng.normal(size=(n, n))), 2))
        seeds = rng.integers(0, 2, size=(int(rng.integers(1, 6)), n)).astype(bool)
        seeds[~seeds.any(axis=1), 0] = True
        cfg = GaConfig(
            population=int(rng.integers(2, 40)),
            generations=int(rng.integers(0, 30)),
            elitism_prob=float(rng.uniform(0, 1)),
            mutation_prob=float(rng.uniform(0, 1)),
            seeds=tuple(seeds),
            seed=trial,
        )
        result = genetic(objective, n, cfg)
        violations += result.energy > float(np.min(objective(seeds)))
    record("seed-monotonicity", violations == 0, f"{violations} violations in 100 randomized trials")


def test_psd_repair():
    rng = np.random.default_rng(6)
    ok, worst_ratio, cases = True, 0.0, 0
    clip = 1e-6
    for d in (2, 5, 10, 40, 100):
        for _ in range(5):
            qm, _ = np.linalg.qr(rng.normal(size=(d, d)))
            vals = rng.uniform(1e-3, 1.0, d)
            vals[int(rng.integers(d))] = -1e-8
            m = (qm * vals) @ qm.T
            m = (m + m.T) / 2
            out = repair_psd(m, clip)
            change = float(np.max(np.abs(out - m)))
            ok &= cholesky_succeeds(out) and change <= d * clip
            worst_ratio = max(worst_ratio, change / (d * clip))
            cases += 1
    record("psd-repair", ok, f"{cases} perturbed matrices (d up to 100), worst change/(d*clip) = {worst_ratio:.2e}")


def test_tanh_scaling(tmp_path):
    emitted = []
    for seed in range(3):
        s = random_stats(12, seed=seed)
        for mode in ("exact_alpha0", "paper"):
            for n in range(2, 13):
                q = build_qubo(s, n, 1.0, mode)
                emitted.append((q, tanh_scale(q)))
                sh = apply_shift(q, shift_factor(0.01, 5.0, n, 12))
                emitted.append((sh, tanh_scale(sh)))
                emitted.append((sh, tanh_scale(sh, tau=1e-6)))
    in_range = all(np.all(np.abs(out.coeffs) <= 0.99) for _, out in emitted)
    zero_kept = all(np.all(out.coeffs[src.coeffs == 0] == 0) for src, out in emitted)
    sign_kept = all(np.array_equal(np.sign(out.coeffs), np.sign(src.coeffs)) for src, out in emitted)
    cfg = load_config(BUNDLED_DATA / "experiment.ini", output=str(tmp_path / "run"))
    run_experiment(cfg)
    files = sorted((tmp_path / "run" / "qubo").glob("*.txt"))
    files_ok = all(np.all(np.abs(import_qubo(f).coeffs) <= 0.99) for f in files)
    ok = in_range and zero_kept and sign_kept and files_ok and files
    record("tanh-scaling", bool(ok),
           f"{len(emitted)} in-memory matrices and {len(files)} pipeline files within [-0.99, 0.99], zeros kept")


def test_landscape_tilt(tmp_path):
    paths = make_dataset(tmp_path / "data", n_assets=10, hedge=False, seed=10)
    s = ingest(paths["prices"], paths["indices"], paths["risk_free"]).stats
    g = brute_force(CqnsObjective(s), s.n_assets).energy
    masks = all_masks(s.n_assets)[1:]
    sizes = masks.sum(axis=1)
    details, ok = [], s.n_assets == 10 and g > 0
    for mode in ("exact_alpha0", "paper"):
        for n in range(3, 11):
            sp = shift_factor(g, 5.0, n, s.n_assets)
            q = apply_shift(build_qubo(s, n, 1.0, mode), sp)
            energy = qubo_energy_batch(q, masks)
            small, target = energy[sizes == 2].mean(), energy[sizes == n].mean()
            ok &= sp.s_n < 0 and small > target
            details.append(small - target)
    record("landscape-tilt", bool(ok),
           f"16 shifted QUBOs on 10 assets (g = {g:.3e}), min(mean E(size 2) - mean E(target)) = {min(details):.3e}")


def test_determinism(tmp_path):
    cfg_path = BUNDLED_DATA / "experiment.ini"
    run_experiment(load_config(cfg_path, output=str(tmp_path / "a")))
    run_experiment(load_config(cfg_path, output=str(tmp_path / "b")))
    run_experiment(load_config(cfg_path, output=str(tmp_path / "c"), workers=4))
    a, b, c = tree(tmp_path / "a"), tree(tmp_path / "b"), tree(tmp_path / "c")
    ok = a == b == c and len(a) > 10
    record("run-determinism", ok, f"{len(a)} files byte-identical across 2 runs and workers 1 vs 4")


def test_desk_scale_brute_force(tmp_path):
    s = random_stats(24, seed=24)
    objective = CqnsObjective(s)

    tracemalloc.start()
    started = time.perf_counter()
    straight = brute_force(objective, 24)
    elapsed = time.perf_counter() - started
    _, peak24 = tracemalloc.get_traced_memory()
    tracemalloc.stop()

    tracemalloc.start()
    brute_force(CqnsObjective(random_stats(20, seed=24)), 20)
    _, peak20 = tracemalloc.get_traced_memory()
    tracemalloc.stop()

    ckpt = tmp_path / "bf.ckpt"
    total = (1 << 24) - 1

    def interrupt(last):
        if last >= total // 2:
            raise KeyboardInterrupt

    try:
        brute_force(objective, 24, ckpt, checkpoint_every=1 << 20, progress=interrupt)
        interrupted = False
    except KeyboardInterrupt:
        interrupted = True
    midway = int(ckpt.read_text().split()[0])
    resumed = brute_force(objective, 24, ckpt, checkpoint_every=1 << 20)
    ok = (
        elapsed < 300
        and interrupted
        and 0 < midway < total
        and resumed.mask == straight.mask
        and resumed.energy == straight.energy
        and resumed.evaluations == straight.evaluations
        and peak24 < 2 * peak20 + (1 << 20)
    )
    record("desk-scale-brute-force", ok,
           f"N=24 in {elapsed:.1f}s, peak {peak24 / 2**20:.1f} MiB (N=20: {peak20 / 2**20:.1f} MiB), "
           f"resumed from {midway} to mask {resumed.mask.to_hex()}")
