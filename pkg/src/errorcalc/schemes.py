"""Approximation schemes: paired samplers (Y, Y_n) with their scale alpha_n.

Each scheme optionally carries a reference :class:`DirichletStructure` with the
analytic bias operators, plus closed-form bias/variance helpers where they exist.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .error_core import CallableField, DirichletStructure, ExprField
from .jet2 import TestFunction
from .laws import Law, NormalLaw, UniformLaw, law_from_json
from .rng import substream


@dataclass(frozen=True)
class Draws:
    """``count`` i.i.d. draws, each made of ``m`` weighted (Y, Y_n) pairs.

    Shapes: ``y, yn`` are ``(count, m, d)``; ``weight`` is ``(count, m)`` or None.
    The Monte Carlo value of a draw is the weighted average over its ``m`` pairs.
    """

    y: np.ndarray
    yn: np.ndarray
    weight: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.y.shape[0]

    def combine(self, values: np.ndarray) -> np.ndarray:
        """Reduce per-pair values of shape ``(count, m, ...)`` to one value per draw."""
        if self.weight is not None:
            values = values * self.weight.reshape(self.weight.shape + (1,) * (values.ndim - 2))
        return values.mean(axis=1)


class ApproximationScheme:
    name: str = "scheme"
    dimension: int = 1
    reference: DirichletStructure | None = None
    supports_antithetic: bool = False

    def alpha(self, n: int) -> float:
        raise NotImplementedError

    def sample(self, n: int, count: int, rng: np.random.Generator, antithetic: bool = False) -> Draws:
        raise NotImplementedError

    def _no_antithetic(self, antithetic: bool) -> None:
        if antithetic and not self.supports_antithetic:
            raise ValueError(f"{self.name} scheme has no antithetic sampler")


def _pairs(y: np.ndarray, yn: np.ndarray) -> Draws:
    return Draws(y[:, None, :], yn[:, None, :])


# --- binary digits ----------------------------------------------------------

BITS = 53


def truncate_bits(bits: Sequence[int], n: int) -> float:
    """Dyadic truncation ``sum_{k<=n} a_k 2^-k``."""
    return float(sum(Fraction(int(a), 2 ** (k + 1)) for k, a in enumerate(bits[:n])))


def binary_reference_bias(n: int) -> Fraction:
    return Fraction(1, 2 ** (n + 1))


def binary_reference_variance(n: int) -> Fraction:
    return Fraction(1, 12 * 4**n)


def binary_conditional_moments(prefix: Sequence[int], depth: int) -> tuple[Fraction, Fraction]:
    """Exact conditional mean and variance of ``x - x_n`` given the prefix, for the tail truncated at ``depth`` bits.

    Enumerates all ``2**depth`` continuations; as ``depth`` grows the values
    approach ``2^-(n+1)`` and ``4^-n / 12``.
    """
    n = len(prefix)
    total = Fraction(0)
    total2 = Fraction(0)
    for tail in itertools.product((0, 1), repeat=depth):
        err = sum((Fraction(a, 2 ** (n + k + 1)) for k, a in enumerate(tail)), Fraction(0))
        total += err
        total2 += err * err
    m = 2**depth
    mean = total / m
    return mean, total2 / m - mean * mean


@dataclass
class BinaryDigitScheme(ApproximationScheme):
    """Y from i.i.d. fair bits, Y_n its n-bit truncation; alpha_n = 2^n.

    Y is drawn at 53-bit resolution, which shifts the bias by 2^-54 (below float
    resolution of the quantities involved).  The reference operators are those
    of a first-order (weakly stochastic) error: A_bar = -1/2 d/dx, A_tilde = 0.
    """

    name: str = "binary-digit"
    dimension: int = 1

    def __post_init__(self):
        self.reference = DirichletStructure(
            1,
            ExprField.parse([["0"]], 1),
            drift=ExprField.parse(["0"], 1),
            theoretical_drift=ExprField.parse(["-0.5"], 1),
            measure=UniformLaw(0.0, 1.0, 1),
        )

    def alpha(self, n):
        return 2.0**n

    def sample(self, n, count, rng, antithetic=False):
        self._no_antithetic(antithetic)
        if not 0 <= n <= BITS:
            raise ValueError(f"binary-digit level must be in [0, {BITS}], got {n}")
        k = rng.integers(0, 2**BITS, size=count, dtype=np.int64)
        y = np.ldexp(k.astype(float), -BITS)
        yn = np.ldexp((k >> (BITS - n)).astype(float), -n)
        return _pairs(y[:, None], yn[:, None])

    bias = staticmethod(binary_reference_bias)
    variance = staticmethod(binary_reference_variance)


def binary_digit_scheme() -> BinaryDigitScheme:
    return BinaryDigitScheme()


# --- Polya urn --------------------------------------------------------------


def polya_step(x: np.ndarray, u: np.ndarray, k: int) -> np.ndarray:
    """One draw of the urn: ``X_k = X_{k-1} + (1{U_k <= X_{k-1}} - X_{k-1}) / (k + 2)``."""
    return x + ((u <= x).astype(float) - x) / (k + 2)


def polya_white_distribution(n: int) -> dict[int, Fraction]:
    """Exact law of the number of white balls after ``n`` draws, by enumerating all 2^n paths."""
    dist: dict[int, Fraction] = {}
    for path in itertools.product((0, 1), repeat=n):
        white, total, prob = 1, 2, Fraction(1)
        for draw in path:
            p_white = Fraction(white, total)
            prob *= p_white if draw else 1 - p_white
            white += draw
            total += 1
        dist[white] = dist.get(white, Fraction(0)) + prob
    return dist


def polya_conditional_variance(x, n: int):
    """Var(X_inf | F_n): the posterior of X_inf is Beta(W_n, n + 2 - W_n)."""
    return x * (1 - x) / (n + 3)


def polya_expected_variance(n: int) -> Fraction:
    return Fraction(1, 6 * (n + 2))


def polya_enumerated_variance(n: int) -> Fraction:
    """E[v_n] from the enumerated law of W_n and the Beta posterior variance."""
    return sum(
        (p * polya_conditional_variance(Fraction(w, n + 2), n) for w, p in polya_white_distribution(n).items()),
        Fraction(0),
    )


@dataclass
class PolyaScheme(ApproximationScheme):
    """Urn proportion X_n against X_horizon, which stands in for X_inf; alpha_n = n + 2.

    The first ``n`` draws follow the urn recurrence literally.  The remaining
    ``horizon - n`` draws are taken in one step from their exact conditional law
    (a beta-binomial count of white balls), which is identical in law to
    continuing the recurrence.
    """

    horizon: int = 100_000
    name: str = "polya"
    dimension: int = 1

    def __post_init__(self):
        # Wright-Fisher-type operators: theta = x(1-x), rho = 1 - 2x
        self.reference = DirichletStructure(
            1,
            ExprField.parse([["x0 * (1 - x0)"]], 1),
            drift=ExprField.parse(["0.5 * (1 - 2 * x0)"], 1),
            theoretical_drift=ExprField.parse(["1 - 2 * x0"], 1),
            measure=UniformLaw(0.0, 1.0, 1),
        )

    def alpha(self, n):
        return float(n + 2)

    def simulate(self, n: int, count: int, rng: np.random.Generator) -> np.ndarray:
        x = np.full(count, 0.5)
        for k in range(1, n + 1):
            x = polya_step(x, rng.random(count), k)
        return x

    def sample(self, n, count, rng, antithetic=False):
        self._no_antithetic(antithetic)
        if n > self.horizon:
            raise ValueError(f"level n={n} exceeds the horizon {self.horizon}")
        xn = self.simulate(n, count, rng)
        white = np.rint(xn * (n + 2))
        rest = self.horizon - n
        if rest > 0:
            p = rng.beta(white, n + 2 - white)
            white_end = white + rng.binomial(rest, p)
        else:
            white_end = white
        y = white_end / (self.horizon + 2)
        return _pairs(y[:, None], xn[:, None])

    bias = staticmethod(lambda n: Fraction(0))
    expected_variance = staticmethod(polya_expected_variance)


def polya_scheme(horizon: int = 100_000) -> PolyaScheme:
    return PolyaScheme(horizon)


# --- graduation -------------------------------------------------------------


def theta(x):
    """Signed offset from x to the centre of its unit cell: 1/2 - {x}."""
    x = np.asarray(x, dtype=float)
    return 0.5 - (x - np.floor(x))


def graduate(y, n: int):
    """Reading to the nearest graduation of step 1/n: [n y]/n + 1/(2n)."""
    y = np.asarray(y, dtype=float)
    return np.floor(n * y) / n + 1.0 / (2 * n)


def graduation_structure(law: Law) -> DirichletStructure:
    """Reference operators: A_bar = Laplacian/24, Gamma = |grad|^2/12, drift = score/24."""
    d = law.dimension
    diffusion = ExprField.parse([["1/12" if i == j else "0" for j in range(d)] for i in range(d)], d)
    if isinstance(law, NormalLaw):
        drift = ExprField.parse([f"-(x{i} - {law.mean!r}) / {24 * law.std**2!r}" for i in range(d)], d)
    elif isinstance(law, UniformLaw):
        drift = ExprField.parse(["0"] * d, d)
    else:
        drift = CallableField(lambda y: law.score(y) / 24.0, (d,))
    return DirichletStructure(d, diffusion, drift, None, law)


@dataclass
class GraduationScheme(ApproximationScheme):
    """Y read to the nearest graduation of step 1/n, coordinate by coordinate; alpha_n = n^2.

    For a uniform law the symmetric drift is zero in the interior only: when the
    support is bounded the finite-level limits carry boundary terms such as
    ``-1/24 [phi' chi]`` for the singular operator, so interior claims need test
    functions whose boundary flux vanishes.

    ``antithetic=True`` pairs each Y with its mirror image ``2 Y_n - Y`` inside
    the same cell, weighted by the density ratio; this keeps the estimator
    unbiased and cancels the O(n) first-order noise.
    """

    law: Law = field(default_factory=NormalLaw)
    name: str = "graduation"
    supports_antithetic: bool = True

    def __post_init__(self):
        self.dimension = self.law.dimension
        self.reference = graduation_structure(self.law)

    def alpha(self, n):
        return float(n) ** 2

    def sample(self, n, count, rng, antithetic=False):
        y = self.law.sample(rng, count)
        yn = graduate(y, n)
        if not antithetic:
            return _pairs(y, yn)
        mirror = 2.0 * yn - y
        ratio = self.law.density(mirror) / self.law.density(y)
        return Draws(
            np.stack([y, mirror], axis=1),
            np.stack([yn, yn], axis=1),
            np.stack([np.ones(count), ratio], axis=1),
        )


def graduation_scheme(law: Law | None = None) -> GraduationScheme:
    return GraduationScheme(law if law is not None else NormalLaw())


def conditional_bias_profile(
    phi: TestFunction,
    n: int,
    weight: Callable[[np.ndarray], np.ndarray],
    support: tuple[float, float],
    nodes: int = 8,
) -> float:
    """Integral of ``n^2 (phi(y + theta(n y)/n) - phi(y)) w(y)`` over ``support`` (one dimension).

    Gauss-Legendre on every graduation cell, where the integrand is smooth.
    """
    a, b = map(float, support)
    if not (math.isfinite(a) and math.isfinite(b) and b > a):
        raise ValueError("weight support must be a finite interval")
    if phi.dimension != 1:
        raise ValueError("conditional_bias_profile is one-dimensional")
    k = np.arange(math.ceil(a * n), math.floor(b * n) + 1) / n
    cuts = np.unique(np.concatenate([[a], k[(k > a) & (k < b)], [b]]))
    x, w = leggauss(nodes)
    lo, hi = cuts[:-1, None], cuts[1:, None]
    pts = 0.5 * (hi - lo) * (x + 1.0) + lo
    wts = 0.5 * (hi - lo) * w
    # cell index from the interval midpoint keeps theta consistent inside each cell
    cell = np.floor(n * 0.5 * (lo + hi))
    shifted = (cell + 0.5) / n
    pts_flat = pts.reshape(-1, 1)
    delta = phi(np.broadcast_to(shifted, pts.shape).reshape(-1, 1)) - phi(pts_flat)
    vals = n**2 * delta * np.asarray(weight(pts_flat), dtype=float).reshape(-1)
    total = float(np.sum(wts.reshape(-1) * vals))
    if not math.isfinite(total):
        raise ValueError("quadrature produced a non-finite value")
    return total


# --- small perturbations ----------------------------------------------------


@dataclass
class PerturbationScheme(ApproximationScheme):
    """Y_eps = Y + eps Z + sqrt(eps) T G with G independent, centred, unit covariance.

    Level k means eps_k = ``epsilon(k)`` (default 2^-k) and alpha_k = 1/eps_k.
    ``z_map(y, rng)`` returns Z with shape ``(N, d)``; ``t_map(y, rng)`` returns T
    with shape ``(N, d, q)``.
    """

    law: Law
    z_map: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    t_map: Callable[[np.ndarray, np.random.Generator], np.ndarray]
    g_law: Law
    epsilon: Callable[[int], float] = lambda k: 2.0**-k
    reference: DirichletStructure | None = None
    g_symmetric: bool = False
    validation_samples: int = 100_000
    validation_seed: int = 0
    name: str = "perturbation"

    def __post_init__(self):
        self.dimension = self.law.dimension
        self.supports_antithetic = self.g_symmetric
        g = self.g_law.sample(substream(self.validation_seed, "perturbation", "g-validation"), self.validation_samples)
        mean = g.mean(axis=0)
        sd = g.std(axis=0, ddof=1)
        z = np.abs(mean) / (sd / math.sqrt(len(g)))
        if np.any(z > 3.0):
            raise ValueError(f"perturbation noise G is not centred (|z| = {z.max():.2f} > 3)")

    def g_covariance_zscores(self, samples: int | None = None) -> np.ndarray:
        """z-scores of the sample covariance of G against the identity (entrywise)."""
        m = samples or self.validation_samples
        g = self.g_law.sample(substream(self.validation_seed, "perturbation", "g-covariance"), m)
        prods = g[:, :, None] * g[:, None, :]
        target = np.eye(g.shape[1])
        se = prods.std(axis=0, ddof=1) / math.sqrt(m)
        return (prods.mean(axis=0) - target) / se

    def alpha(self, n):
        return 1.0 / self.epsilon(n)

    def sample(self, n, count, rng, antithetic=False):
        self._no_antithetic(antithetic)
        eps = self.epsilon(n)
        y = self.law.sample(rng, count)
        z = np.asarray(self.z_map(y, rng), dtype=float).reshape(count, self.dimension)
        t = np.asarray(self.t_map(y, rng), dtype=float)
        t = t.reshape(count, self.dimension, -1)
        g = self.g_law.sample(rng, count)
        drift = y + eps * z
        noise = math.sqrt(eps) * np.einsum("nij,nj->ni", t, g)
        if not antithetic:
            return _pairs(y, drift + noise)
        return Draws(np.stack([y, y], axis=1), np.stack([drift + noise, drift - noise], axis=1))


def gaussian_perturbation(**kwargs) -> PerturbationScheme:
    """Y ~ N(0,1), Z = Y, T = 1, G ~ N(0,1): A_bar = y d/dy + 1/2 d2, A_tilde = 1/2 (d2 - y d/dy)."""
    reference = DirichletStructure(
        1,
        ExprField.parse([["1"]], 1),
        drift=ExprField.parse(["-0.5 * x0"], 1),
        theoretical_drift=ExprField.parse(["x0"], 1),
        measure=NormalLaw(),
    )
    return PerturbationScheme(
        NormalLaw(),
        lambda y, rng: y,
        lambda y, rng: np.ones(y.shape + (1,)),
        NormalLaw(),
        reference=reference,
        g_symmetric=True,
        **kwargs,
    )


def perturbation_from_config(doc: dict) -> PerturbationScheme:
    d = int(doc.get("d", 1))
    law = law_from_json(doc.get("law", {"kind": "normal"}), d)
    z = ExprField.parse(doc.get("z", ["0"] * d), d)
    t_doc = doc.get("t", [["1" if i == j else "0" for j in range(d)] for i in range(d)])
    t = ExprField.parse(t_doc, d)
    q = t.shape[-1] if len(t.shape) == 2 else 1
    g_doc = doc.get("g", {"kind": "normal"})
    g_law = law_from_json(g_doc, q)
    symmetric = g_doc.get("kind", "normal") == "normal" and float(g_doc.get("mean", 0.0)) == 0.0
    t_mat = lambda y: t(y).reshape(y.shape[:-1] + (d, q))
    reference = DirichletStructure(
        d,
        CallableField(lambda y: np.einsum("...iq,...jq->...ij", t_mat(y), t_mat(y)), (d, d)),
        drift=ExprField.parse(doc["drift"], d) if "drift" in doc else None,
        theoretical_drift=z,
        measure=law,
    )
    eps_base = float(doc.get("eps_base", 0.5))
    return PerturbationScheme(
        law,
        lambda y, rng: z(y),
        lambda y, rng: t_mat(y),
        g_law,
        epsilon=lambda k: eps_base**k,
        reference=reference,
        g_symmetric=symmetric,
    )


def scheme_from_config(doc: dict) -> ApproximationScheme:
    """Build a scheme from its JSON description, e.g. ``{"scheme": "graduation", "law": {"kind": "normal"}, "d": 1}``."""
    kind = doc.get("scheme")
    d = int(doc.get("d", 1))
    if kind == "graduation":
        return GraduationScheme(law_from_json(doc.get("law", {"kind": "normal"}), d))
    if kind == "binary-digit":
        return BinaryDigitScheme()
    if kind == "polya":
        return PolyaScheme(int(doc.get("horizon", 100_000)))
    if kind == "perturbation":
        if doc.get("model") == "gaussian":
            return gaussian_perturbation()
        return perturbation_from_config(doc)
    raise ValueError(f"unknown scheme {kind!r}; expected graduation, binary-digit, polya or perturbation")
