"""From price files to repaired return statistics."""
# %%
import tempfile
from pathlib import Path

import numpy as np

from qportfolio.harness import ingest
from qportfolio.marketdata import cholesky_succeeds, repair_psd
from qportfolio.synthetic import make_dataset

# %% [markdown]
# Generate a year of synthetic prices: 12 one-factor assets plus a hedge that
# moves against the market, three indices (one drifting down) and a T-bill yield.

# %%
workdir = Path(tempfile.mkdtemp(prefix="qp-demo-"))
paths = make_dataset(workdir, n_assets=12, seed=2020)
for name, path in paths.items():
    print(f"{name:10s} {path.name:15s} {len(path.read_text().splitlines()) - 1} rows")

# %% [markdown]
# Ingest applies the history and beta filters and repairs the covariance.
# The hedge has a negative beta and is dropped.

# %%
data = ingest(paths["prices"], paths["indices"], paths["risk_free"])
print(data.filters.to_json())
stats = data.stats
print("kept", stats.n_assets, "assets over", stats.n_days, "daily returns")
print("betas  ", np.round(stats.beta, 2))
print("mu (bp)", np.round(stats.mu * 1e4, 2))

# %% [markdown]
# Market context works at daily frequency. The falling index is floored at zero.

# %%
ctx = data.ctx
print("index returns", [f"{r:.2e}" for r in ctx.index_returns])
print(f"market {ctx.market_return:.2e}  risk-free {ctx.risk_free_rate:.2e} per day")

# %% [markdown]
# Repair only touches matrices that fail a Cholesky test. A slightly negative
# eigenvalue gets clipped and the result stays within d * threshold of the input.

# %%
rng = np.random.default_rng(0)
q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
vals = np.array([-1e-8, 0.2, 0.4, 0.6, 0.8, 1.0])
bad = (q * vals) @ q.T
bad = (bad + bad.T) / 2
fixed = repair_psd(bad, 1e-6)
print("cholesky before/after:", cholesky_succeeds(bad), cholesky_succeeds(fixed))
print(f"max change {np.abs(fixed - bad).max():.2e}")
