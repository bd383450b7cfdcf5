"""Distributional diagnostics for the arbitrary functions principle, and rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize
from scipy.stats import chi2

from .rng import substream


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    samples: np.ndarray
    count: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.shape[0] != self.count:
            raise ValueError("samples must be a 1-d array of length count")
        if s.size > 1 and np.any(np.diff(s) < 0):
            raise ValueError("samples must be sorted ascending")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @classmethod
    def of(cls, values) -> "EmpiricalDistribution":
        s = np.sort(np.asarray(values, dtype=float).ravel())
        return cls(s, s.shape[0])


def kolmogorov_sf(lam: float, terms: int = 100) -> float:
    """P(K > lam) for the Kolmogorov distribution, series truncated at ``terms``."""
    if lam <= 0:
        return 1.0
    k = np.arange(1, terms + 1)
    val = 2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * lam**2))
    return float(min(max(val, 0.0), 1.0))


def ks_critical(count: int, level: float = 0.01) -> float:
    """Asymptotic critical value of D at the given level: lam / sqrt(N) with P(K > lam) = level."""
    lam = optimize.brentq(lambda x: kolmogorov_sf(x) - level, 0.2, 5.0, xtol=1e-12)
    return lam / math.sqrt(count)


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    count: int

    def passes(self, level: float = 0.01) -> bool:
        return self.statistic < ks_critical(self.count, level)


def ks_uniform(dist: EmpiricalDistribution) -> KSResult:
    """One-sample KS distance to U[0,1] and its asymptotic p-value."""
    if dist.count == 0:
        raise ValueError("empty sample")
    x = dist.samples
    if x[0] < 0 or x[-1] > 1:
        raise ValueError("samples must lie in [0, 1]")
    n = dist.count
    i = np.arange(1, n + 1)
    d = float(max(np.max(i / n - x), np.max(x - (i - 1) / n)))
    return KSResult(d, kolmogorov_sf(math.sqrt(n) * d), n)


def ks_two_sample(a: EmpiricalDistribution, b: EmpiricalDistribution) -> KSResult:
    if a.count == 0 or b.count == 0:
        raise ValueError("empty sample")
    grid = np.concatenate([a.samples, b.samples])
    fa = np.searchsorted(a.samples, grid, side="right") / a.count
    fb = np.searchsorted(b.samples, grid, side="right") / b.count
    d = float(np.max(np.abs(fa - fb)))
    ne = a.count * b.count / (a.count + b.count)
    return KSResult(d, kolmogorov_sf(math.sqrt(ne) * d), int(round(ne)))


@dataclass(frozen=True)
class Chi2Result:
    statistic: float
    dof: int
    bins: tuple[int, int]

    def threshold(self, level: float = 0.01) -> float:
        return float(chi2.ppf(1.0 - level, self.dof)) if self.dof > 0 else 0.0

    def passes(self, level: float = 0.01) -> bool:
        return self.statistic <= self.threshold(level)


def _categories(v: np.ndarray, bins: int, grid: float | None = None) -> np.ndarray:
    """Equal-probability bin labels; a variable with few distinct values keeps them as categories.

    With ``grid`` the quantile edges are rounded to multiples of it.
    """
    uniq = np.unique(v)
    if uniq.size <= bins:
        return np.searchsorted(uniq, v)
    edges = np.quantile(v, np.linspace(0, 1, bins + 1))[1:-1]
    if grid is not None:
        edges = np.round(edges / grid) * grid
    return np.searchsorted(np.unique(edges), v, side="right")


def independence_chi2(v, y, bins_v: int = 20, bins_y: int = 20, *, y_grid: float | None = None) -> Chi2Result:
    """Pearson chi-square test of independence on an equal-probability contingency table.

    Bins are halved (merged pairwise) until every expected count is at least 5.
    ``y_grid`` aligns the y edges to a lattice; for quantization errors of step
    1/n, edges that split a cell create a dependence of their own, visible at
    finite n, so pass ``y_grid=1/n`` there.
    """
    v = np.asarray(v, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if v.size != y.size or v.size == 0:
        raise ValueError("need two non-empty samples of equal length")
    if bins_v < 1 or bins_y < 1:
        raise ValueError("degenerate binning: bin counts must be >= 1")
    while True:
        cv, cy = _categories(v, bins_v), _categories(y, bins_y, y_grid)
        rv, ry = cv.max() + 1, cy.max() + 1
        table = np.zeros((rv, ry))
        np.add.at(table, (cv, cy), 1.0)
        expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0, keepdims=True) / v.size
        if expected.min() >= 5 or (bins_v == 1 and bins_y == 1):
            break
        if bins_v >= bins_y and bins_v > 1:
            bins_v = max(1, bins_v // 2)
        else:
            bins_y = max(1, bins_y // 2)
    dof = (rv - 1) * (ry - 1)
    if dof == 0:
        return Chi2Result(0.0, 0, (int(rv), int(ry)))
    stat = float(np.sum((table - expected) ** 2 / expected))
    return Chi2Result(stat, int(dof), (int(rv), int(ry)))


@dataclass(frozen=True)
class PsiComposition:
    ks: KSResult
    independence: Chi2Result
    values: EmpiricalDistribution
    reference: EmpiricalDistribution


def psi_composition_test(
    scheme,
    psi: Callable[[np.ndarray], np.ndarray],
    n: int,
    samples: int,
    *,
    seed: int = 0,
    coordinate: int = 0,
    bins: int = 20,
) -> PsiComposition:
    """Compare the law of psi(1/2 + n(Y_n - Y)) with that of psi(U), U uniform on [0,1]^d.

    Also tests independence of psi-values from coordinate ``coordinate`` of Y.
    ``psi`` maps points of shape ``(N, d)`` in [0,1]^d to ``(N,)``.
    """
    draws = scheme.sample(n, samples, substream(seed, "psi-composition", "scheme"))
    y, yn = draws.y[:, 0, :], draws.yn[:, 0, :]
    u = 0.5 + n * (yn - y)
    vals = np.asarray(psi(u), dtype=float).reshape(-1)
    ref_u = substream(seed, "psi-composition", "reference").random(u.shape)
    ref = np.asarray(psi(ref_u), dtype=float).reshape(-1)
    a, b = EmpiricalDistribution.of(vals), EmpiricalDistribution.of(ref)
    chi = independence_chi2(vals, y[:, coordinate], bins, bins, y_grid=1.0 / n)
    return PsiComposition(ks_two_sample(a, b), chi, a, b)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float


def rate_fit(levels, values) -> RateFit:
    """Least squares of log(value) on log(level)."""
    n = np.asarray(levels, dtype=float)
    a = np.asarray(values, dtype=float)
    if n.size != a.size or n.size < 3:
        raise ValueError("need at least 3 (level, value) pairs")
    if np.any(a <= 0) or np.any(n <= 0):
        raise ValueError("rate_fit needs positive levels and values")
    x, y = np.log(n), np.log(a)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2)
