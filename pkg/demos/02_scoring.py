"""Sharpe, CQR and CQNS on the bundled universe."""
# %%
import numpy as np

from qportfolio.harness import BUNDLED_DATA, ingest
from qportfolio.qubo import masks_from_ints
from qportfolio.scoring import Portfolio, cqns_batch, score_all

data = ingest(BUNDLED_DATA / "prices.csv", BUNDLED_DATA / "indices.csv", BUNDLED_DATA / "risk_free.csv")
stats, ctx = data.stats, data.ctx

# %% [markdown]
# Every score uses equal weights 1/n over the chosen assets. Masks are
# integers with bit i standing for asset i.

# %%
everything = score_all(stats, ctx, Portfolio(np.ones(stats.n_assets, dtype=bool)))
print(everything.to_json())

# %% [markdown]
# Score all 4095 non-empty portfolios in one vectorised call and list the best few.

# %%
masks = masks_from_ints(np.arange(1, 1 << stats.n_assets), stats.n_assets)
values = cqns_batch(stats, masks)
print("mask   size  cqns        E[R]      std")
for i in np.argsort(values)[:5]:
    s = score_all(stats, ctx, masks[i])
    print(f"{s.mask_hex:6s} {s.size:4d}  {s.cqns:.4e}  {s.expected_return:.2e}  {s.std_dev:.4f}")

# %% [markdown]
# The CQNS optimum sits on the risk/return frontier: nothing in the pool has
# both lower risk and higher return.

# %%
mean = masks @ stats.mu / masks.sum(1)
std = np.sqrt(((masks @ stats.cov) * masks).sum(1)) / masks.sum(1)
best = int(np.argmin(values))
dominated = (std <= std[best]) & (mean >= mean[best]) & ((std < std[best]) | (mean > mean[best]))
print("portfolios dominating the CQNS optimum:", int(dominated.sum()))
