"""Per-size QUBOs, the size shift, tanh scaling and the Ising form."""
# %%
import numpy as np

from qportfolio.qubo import (
    apply_shift,
    build_qubo,
    landscape_profile,
    qubo_energy,
    shift_factor,
    tanh_scale,
    to_ising,
)
from qportfolio.scoring import Portfolio, cqns
from qportfolio.synthetic import random_stats

stats = random_stats(10, seed=3)

# %% [markdown]
# In exact mode the energy of any size-n mask is the CQNS with alpha = 0.

# %%
q = build_qubo(stats, 4, alpha=0.0, mode="exact_alpha0")
p = Portfolio.from_indices([0, 3, 5, 8], 10)
print(f"energy {qubo_energy(q, p):.12f}  cqns(alpha=0) {cqns(stats, p, 0.0):.12f}")

# %% [markdown]
# The shift moves every size-n energy by the same constant s_n (1 + n), so
# the best size-n mask is unchanged. Across sizes it adds s_n (k/n + k(k-1)/(n-1))
# at size k. With g > 0 the shift is negative and grows roughly with k^2, so
# small portfolios lose ground and the large end of the landscape sinks.

# %%
g = 0.05
for mode in ("exact_alpha0", "paper"):
    base = build_qubo(stats, 6, 1.0, mode)
    shifted = apply_shift(base, shift_factor(g, 5.0, 6, 10))
    flat = landscape_profile(base, stats).mean_energy_by_size()
    tilted = landscape_profile(shifted, stats).mean_energy_by_size()
    print(mode)
    print("  size  unshifted   shifted")
    for k in range(1, 11):
        print(f"  {k:4d}  {flat[k]:+.4f}   {tilted[k]:+.4f}")

# %% [markdown]
# tanh scaling squeezes coefficients into [-0.99, 0.99] without changing signs.

# %%
scaled = tanh_scale(shifted)
print("coefficient range", scaled.coeffs.min().round(4), scaled.coeffs.max().round(4))

# %% [markdown]
# Ising form with z = 2x - 1 gives the same energy for every mask.

# %%
model = to_ising(scaled)
x = Portfolio.from_hex("2b5", 10)
print(f"qubo {qubo_energy(scaled, x):.12f}  ising {model.energy(model.spins(x)):.12f}")
