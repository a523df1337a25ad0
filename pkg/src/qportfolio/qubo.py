"""Per-size QUBO compilation of the CQNS, shift/tanh transforms and Ising conversion."""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    BudgetRequired,
    DegenerateTransform,
    DimensionError,
    InvalidPhaseOrder,
    IoError,
    MalformedData,
    ParamOutOfRange,
    UnsupportedSize,
)
from .marketdata import ReturnStats
from .scoring import DEFAULT_ALPHA, as_portfolio, cqns_batch

MODES = ("exact_alpha0", "paper")
TANH_CUTOFF = 0.99
MULTIPLIER_RANGE = (1.5, 20.0)
DEFAULT_MULTIPLIER = 5.0
EXHAUSTIVE_LIMIT = 24


@dataclass(frozen=True)
class ShiftParams:
    g: float
    m: float
    n: int
    universe: int
    s_n: float


@dataclass(frozen=True, eq=False)
class QuboMatrix:
    """Upper-triangular QUBO: diagonal holds linear terms, strict upper the pairwise terms."""

    coeffs: np.ndarray
    target_size: int
    mode: str = "exact_alpha0"
    alpha: float = 0.0
    shift: ShiftParams | None = None
    scaled: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise DimensionError("QUBO coefficients must be square")
        if np.any(np.tril(c, -1) != 0):
            raise MalformedData("QUBO coefficients must be upper triangular")
        if self.mode not in MODES:
            raise MalformedData(f"unknown build mode {self.mode!r}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_assets(self) -> int:
        return self.coeffs.shape[0]

    @property
    def linear(self) -> np.ndarray:
        return np.diag(self.coeffs)

    def symmetric(self) -> np.ndarray:
        """Symmetric Q with the same quadratic form x'Qx."""
        c = self.coeffs
        return (c + c.T) / 2

    def couplings(self) -> np.ndarray:
        """Full symmetric pairwise matrix (upper + upper') with a zero diagonal."""
        u = np.triu(self.coeffs, 1)
        return u + u.T


def build_qubo(stats: ReturnStats, target_size: int, alpha: float = DEFAULT_ALPHA, mode: str = "exact_alpha0") -> QuboMatrix:
    """Assemble the QUBO for portfolios of exactly ``target_size`` assets.

    ``exact_alpha0``: energy of any size-n mask equals Var - E^2 exactly.
    ``paper``: variance divided by n^2 (n-1), sign-reversed returns divided by
    n, covariances divided by n^2.
    """
    n_assets = stats.n_assets
    if not 2 <= target_size <= n_assets:
        raise UnsupportedSize(f"target size {target_size} outside [2, {n_assets}]")
    n = float(target_size)
    mu, cov = stats.mu, stats.cov
    if mode == "exact_alpha0":
        pair = 2 * (cov - np.outer(mu, mu)) / n**2
        diag = (np.diag(cov) - mu**2) / n**2
    elif mode == "paper":
        pair = 2 * cov / n**2
        diag = np.diag(cov) / (n**2 * (n - 1)) - mu / n
    else:
        raise MalformedData(f"unknown build mode {mode!r}")
    coeffs = np.triu(pair, 1) + np.diag(diag)
    return QuboMatrix(coeffs, target_size, mode, float(alpha))


def shift_factor(g: float, m: float, n: int, universe: int) -> ShiftParams:
    """s_n = -2 g n m / |U| for a best classical score g and multiplier m."""
    lo, hi = MULTIPLIER_RANGE
    if not lo < m < hi:
        raise ParamOutOfRange(f"multiplier {m} outside ({lo}, {hi})")
    if n <= 1:
        raise UnsupportedSize("shift factor is defined for n > 1")
    if universe < n:
        raise UnsupportedSize(f"universe of {universe} cannot hold {n} assets")
    return ShiftParams(float(g), float(m), int(n), int(universe), -2.0 * g * n * m / universe)


def apply_shift(q: QuboMatrix, s: ShiftParams) -> QuboMatrix:
    """Add s_n/n to every linear term and 2 s_n/(n-1) to every pairwise term."""
    if q.scaled:
        raise InvalidPhaseOrder("shift must be applied before tanh scaling")
    n = q.target_size
    d = q.n_assets
    add = np.triu(np.full((d, d), 2.0 * s.s_n / (n - 1)), 1) + np.eye(d) * (s.s_n / n)
    return replace(q, coeffs=q.coeffs + add, shift=s)


def tanh_scale(q: QuboMatrix, tau: float | None = None) -> QuboMatrix:
    """Map each coefficient c to clip(tanh(c / tau), -0.99, 0.99).

    ``tau`` defaults to the largest absolute coefficient.
    """
    c = q.coeffs
    if tau is None:
        tau = float(np.max(np.abs(c))) if c.size else 0.0
        if tau == 0.0:
            tau = 1.0
    elif tau <= 0:
        raise ParamOutOfRange("tanh pre-scale must be positive")
    scaled = np.clip(np.tanh(c / tau), -TANH_CUTOFF, TANH_CUTOFF)
    return replace(q, coeffs=scaled, scaled=True)


def qubo_energy(q: QuboMatrix, mask) -> float:
    x = as_portfolio(mask).mask.astype(float)
    if x.size != q.n_assets:
        raise DimensionError(f"mask over {x.size} assets, QUBO has {q.n_assets}")
    return float(x @ q.coeffs @ x)


def qubo_energy_batch(q: QuboMatrix, masks) -> np.ndarray:
    x = np.atleast_2d(np.asarray(masks, dtype=float))
    if x.shape[1] != q.n_assets:
        raise DimensionError(f"masks have {x.shape[1]} columns, QUBO has {q.n_assets}")
    return ((x @ q.coeffs) * x).sum(axis=1)


@dataclass(frozen=True)
class IsingModel:
    """Energy z'Jz + c.z + k over z = a x + b."""

    couplings: np.ndarray
    field: np.ndarray
    offset: float
    affine: tuple[float, float]

    def energy(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.couplings @ z + self.field @ z + self.offset)

    def spins(self, mask) -> np.ndarray:
        a, b = self.affine
        return a * as_portfolio(mask).mask.astype(float) + b


def to_ising(q: QuboMatrix, a: float = 2.0, b: float = -1.0) -> IsingModel:
    """Rewrite x'Qx in the coordinates z = a x + b (default z = 2x - 1)."""
    if a == 0:
        raise DegenerateTransform("affine scale a must be non-zero")
    J = q.symmetric() / a**2
    bvec = np.full(q.n_assets, float(b))
    c = -2.0 * J @ bvec
    k = float(bvec @ J @ bvec)
    return IsingModel(J, c, k, (float(a), float(b)))


@dataclass(frozen=True)
class Landscape:
    """Energy landscape rows sorted by (size, mask)."""

    sizes: np.ndarray
    masks: np.ndarray
    energies: np.ndarray
    cqns: np.ndarray

    def __len__(self):
        return self.sizes.size

    def rows(self):
        return list(zip(self.sizes.tolist(), self.energies.tolist(), self.cqns.tolist()))

    def mean_energy_by_size(self) -> dict[int, float]:
        return {int(s): float(self.energies[self.sizes == s].mean()) for s in np.unique(self.sizes)}

    def to_csv(self, path) -> None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["size", "energy", "cqns"])
                for s, e, c in zip(self.sizes.tolist(), self.energies.tolist(), self.cqns.tolist()):
                    w.writerow([s, repr(e), repr(c)])
        except OSError as exc:
            raise IoError(str(exc)) from exc


def masks_from_ints(values, n_assets: int) -> np.ndarray:
    v = np.asarray(values, dtype=np.int64)
    return ((v[:, None] >> np.arange(n_assets, dtype=np.int64)) & 1).astype(bool)


def masks_to_ints(masks) -> np.ndarray:
    x = np.atleast_2d(np.asarray(masks, dtype=bool))
    if x.shape[1] > 62:
        raise DimensionError("integer mask encoding supports at most 62 assets")
    return x.astype(np.int64) @ (np.int64(1) << np.arange(x.shape[1], dtype=np.int64))


def landscape_profile(
    q: QuboMatrix,
    stats: ReturnStats,
    alpha: float = DEFAULT_ALPHA,
    sample_budget: int | None = None,
    seed: int = 0,
) -> Landscape:
    """QUBO energy and raw CQNS for every non-empty mask (or a uniform sample)."""
    n = q.n_assets
    if stats.n_assets != n:
        raise DimensionError("stats and QUBO cover different universes")
    if sample_budget is None:
        if n > EXHAUSTIVE_LIMIT:
            raise BudgetRequired(f"{n} assets is too many to enumerate; pass sample_budget")
        ints = np.arange(1, 1 << n, dtype=np.int64)
    else:
        if sample_budget < 1:
            raise ParamOutOfRange("sample_budget must be positive")
        rng = np.random.default_rng(seed)
        draws = rng.integers(0, 2, size=(sample_budget, n), dtype=np.uint8).astype(bool)
        empty = ~draws.any(axis=1)
        while empty.any():
            draws[empty] = rng.integers(0, 2, size=(int(empty.sum()), n), dtype=np.uint8).astype(bool)
            empty = ~draws.any(axis=1)
        ints = np.sort(masks_to_ints(draws)) if n <= 62 else None
        if ints is None:
            raise DimensionError("sampled landscapes support at most 62 assets")
    sizes_all, masks_all, energies_all, cqns_all = [], [], [], []
    block = 1 << 16
    for start in range(0, ints.size, block):
        chunk = ints[start:start + block]
        x = masks_from_ints(chunk, n)
        sizes_all.append(x.sum(axis=1))
        masks_all.append(chunk)
        energies_all.append(qubo_energy_batch(q, x))
        cqns_all.append(cqns_batch(stats, x, alpha))
    sizes = np.concatenate(sizes_all)
    masks = np.concatenate(masks_all)
    order = np.lexsort((masks, sizes))
    return Landscape(sizes[order], masks[order], np.concatenate(energies_all)[order], np.concatenate(cqns_all)[order])


def export_qubo(q: QuboMatrix, path) -> None:
    """Write the coordinate format: header ``N target_size mode alpha`` then ``i j value`` lines."""
    lines = [f"{q.n_assets} {q.target_size} {q.mode} {q.alpha!r}"]
    rows, cols = np.nonzero(q.coeffs)
    for i, j in sorted(zip(rows.tolist(), cols.tolist())):
        lines.append(f"{i} {j} {q.coeffs[i, j]:.17g}")
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc


def import_qubo(path) -> QuboMatrix:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    lines = [ln.split() for ln in text.splitlines() if ln.strip()]
    if not lines or len(lines[0]) != 4:
        raise MalformedData(f"{path}: bad QUBO header")
    n, target, mode, alpha = lines[0]
    n = int(n)
    coeffs = np.zeros((n, n))
    for parts in lines[1:]:
        if len(parts) != 3:
            raise MalformedData(f"{path}: bad coefficient line {' '.join(parts)!r}")
        i, j = int(parts[0]), int(parts[1])
        if not 0 <= i <= j < n:
            raise MalformedData(f"{path}: index ({i}, {j}) outside the upper triangle")
        coeffs[i, j] = float(parts[2])
    return QuboMatrix(coeffs, int(target), mode, float(alpha))
