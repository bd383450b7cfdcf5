"""Laws of the exact quantity Y: sampling, density ratios, score and quadrature.

All laws here are products of one identical marginal per coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from numpy.polynomial.legendre import leggauss

from .jet2 import TestFunction, parse_expr


class Law:
    """Product law on R^d with a smooth (or piecewise smooth) marginal density."""

    dimension: int

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def marginal_density(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def marginal_score(self, y: np.ndarray) -> np.ndarray:
        """p'/p of the marginal, evaluated on the interior of the support."""
        raise NotImplementedError

    def nodes(self, order: int) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights for the marginal (weights sum to 1)."""
        raise NotImplementedError

    def to_json(self) -> dict:
        raise NotImplementedError

    def density(self, y: np.ndarray) -> np.ndarray:
        return np.prod(self.marginal_density(np.asarray(y, dtype=float)), axis=-1)

    def score(self, y: np.ndarray) -> np.ndarray:
        return self.marginal_score(np.asarray(y, dtype=float))

    def expectation(self, fn: Callable[[np.ndarray], np.ndarray], order: int = 64) -> float:
        """E[fn(Y)] by tensor-product quadrature (``fn`` takes points of shape ``(m, d)``)."""
        x, w = self.nodes(order)
        grids = np.meshgrid(*([x] * self.dimension), indexing="ij")
        weights = np.ones_like(grids[0])
        for g in np.meshgrid(*([w] * self.dimension), indexing="ij"):
            weights = weights * g
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        return float(np.sum(weights.ravel() * np.asarray(fn(pts), dtype=float)))


@dataclass(frozen=True)
class NormalLaw(Law):
    mean: float = 0.0
    std: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if self.std <= 0:
            raise ValueError("std must be positive")

    def sample(self, rng, count):
        return self.mean + self.std * rng.standard_normal((count, self.dimension))

    def marginal_density(self, y):
        z = (y - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * math.sqrt(2 * math.pi))

    def marginal_score(self, y):
        return -(y - self.mean) / self.std**2

    def nodes(self, order):
        x, w = hermegauss(order)
        return self.mean + self.std * x, w / w.sum()

    def to_json(self):
        return {"kind": "normal", "mean": self.mean, "std": self.std}


@dataclass(frozen=True)
class UniformLaw(Law):
    low: float = 0.0
    high: float = 1.0
    dimension: int = 1

    def __post_init__(self):
        if not self.high > self.low:
            raise ValueError("uniform law needs high > low")

    def sample(self, rng, count):
        return self.low + (self.high - self.low) * rng.random((count, self.dimension))

    def marginal_density(self, y):
        inside = (y >= self.low) & (y <= self.high)
        return np.where(inside, 1.0 / (self.high - self.low), 0.0)

    def marginal_score(self, y):
        return np.zeros_like(y)

    def nodes(self, order):
        x, w = leggauss(order)
        half = 0.5 * (self.high - self.low)
        return self.low + half * (x + 1.0), w / w.sum()

    def to_json(self):
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class ExprDensityLaw(Law):
    """Law with an unnormalised marginal density given as an expression in ``x0`` on ``[low, high]``.

    Sampling inverts a tabulated CDF on ``grid`` points.
    """

    expression: str
    low: float
    high: float
    dimension: int = 1
    grid: int = 4097
    _fn: TestFunction = field(init=False, repr=False, compare=False)
    _table: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.high > self.low):
            raise ValueError("custom density needs a finite interval low < high")
        fn = TestFunction(parse_expr(self.expression), 1, name=self.expression)
        xs = np.linspace(self.low, self.high, self.grid)
        ps = fn(xs[:, None])
        if np.any(ps < 0) or not np.all(np.isfinite(ps)):
            raise ValueError(f"density {self.expression!r} must be finite and non-negative on the interval")
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (ps[1:] + ps[:-1]) * np.diff(xs))])
        if cdf[-1] <= 0:
            raise ValueError("density integrates to zero")
        object.__setattr__(self, "_fn", fn)
        object.__setattr__(self, "_table", (xs, cdf / cdf[-1], cdf[-1]))

    def sample(self, rng, count):
        xs, cdf, _ = self._table
        u = rng.random((count, self.dimension))
        return np.interp(u, cdf, xs)

    def marginal_density(self, y):
        _, _, total = self._table
        inside = (y >= self.low) & (y <= self.high)
        vals = self._fn(np.clip(y, self.low, self.high)[..., None]) / total
        return np.where(inside, vals, 0.0)

    def marginal_score(self, y):
        j = self._fn.jet(np.asarray(y, dtype=float)[..., None], order=1)
        return j.gradient[..., 0] / j.value

    def nodes(self, order):
        x, w = leggauss(order)
        half = 0.5 * (self.high - self.low)
        pts = self.low + half * (x + 1.0)
        w = w * self.marginal_density(pts)
        return pts, w / w.sum()

    def to_json(self):
        return {"kind": "custom-expr", "density": self.expression, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class PushforwardLaw(Law):
    """Law of ``Phi(X)`` for ``X ~ base``; sampling only."""

    base: Law
    maps: tuple[TestFunction, ...]

    @property
    def dimension(self) -> int:  # type: ignore[override]
        return len(self.maps)

    def sample(self, rng, count):
        x = self.base.sample(rng, count)
        return np.stack([f(x) for f in self.maps], axis=-1)

    def to_json(self):
        return {"kind": "pushforward", "base": self.base.to_json(), "maps": [str(f) for f in self.maps]}


def law_from_json(doc: dict, dimension: int = 1) -> Law:
    kind = doc.get("kind", "normal")
    if kind == "normal":
        return NormalLaw(float(doc.get("mean", 0.0)), float(doc.get("std", 1.0)), dimension)
    if kind == "uniform":
        return UniformLaw(float(doc.get("low", 0.0)), float(doc.get("high", 1.0)), dimension)
    if kind == "custom-expr":
        if "density" not in doc:
            raise ValueError("custom-expr law needs a 'density' expression")
        return ExprDensityLaw(str(doc["density"]), float(doc.get("low", 0.0)), float(doc.get("high", 1.0)), dimension)
    raise ValueError(f"unknown law kind {kind!r}; expected normal, uniform or custom-expr")
