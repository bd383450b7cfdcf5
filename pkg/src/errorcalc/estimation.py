"""Monte Carlo estimation of the four bias operators and of their algebra.

For a scheme with scale alpha_n, Delta phi = phi(Y_n) - phi(Y) and a test
function chi, the finite-level integrands whose means estimate E_Y[B[phi] chi] are

    theoretical  alpha Delta phi chi(Y)
    practical   -alpha Delta phi chi(Y_n)
    symmetric   -alpha/2 Delta phi Delta chi
    singular     alpha/2 Delta phi (chi(Y_n) + chi(Y))
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .error_core import DirichletStructure, scheme_operators
from .jet2 import TestFunction, as_function
from .rng import DEFAULT_BLOCK, run_blocks
from .schemes import ApproximationScheme, Draws
from .stats import RateFit, rate_fit

MIN_SAMPLES = 1000


class Kind(str, Enum):
    THEORETICAL = "theoretical"
    PRACTICAL = "practical"
    SYMMETRIC = "symmetric"
    SINGULAR = "singular"


KINDS = tuple(Kind)


def integrand(kind: Kind, alpha: float, phi_y, phi_n, chi_y, chi_n) -> np.ndarray:
    d_phi = phi_n - phi_y
    if kind is Kind.THEORETICAL:
        return alpha * d_phi * chi_y
    if kind is Kind.PRACTICAL:
        return -alpha * d_phi * chi_n
    if kind is Kind.SYMMETRIC:
        return -0.5 * alpha * d_phi * (chi_n - chi_y)
    if kind is Kind.SINGULAR:
        return 0.5 * alpha * d_phi * (chi_n + chi_y)
    raise ValueError(f"unknown kind {kind!r}")


@dataclass(frozen=True)
class BiasEstimate:
    kind: Kind
    phi: str
    chi: str
    n: int
    value: float
    stderr: float
    samples: int

    def z_score(self, reference: float) -> float:
        if self.stderr == 0:
            return 0.0 if self.value == reference else math.inf
        return (self.value - reference) / self.stderr


def _check(samples: int) -> None:
    if samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {samples}")


def _values(draws: Draws, *functions: TestFunction) -> list[tuple[np.ndarray, np.ndarray]]:
    y, yn = draws.y, draws.yn
    return [(f(y), f(yn)) for f in functions]


def _block_runner(
    scheme: ApproximationScheme,
    n: int,
    columns: Callable[[Draws], np.ndarray],
    antithetic: bool,
) -> Callable[[np.random.Generator, int], np.ndarray]:
    def fn(rng, count):
        draws = scheme.sample(n, count, rng, antithetic=antithetic)
        vals = columns(draws)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError("non-finite sample values")
        return draws.combine(vals)

    return fn


def monte_carlo(
    scheme: ApproximationScheme,
    n: int,
    columns: Callable[[Draws], np.ndarray],
    samples: int,
    *,
    seed: int = 0,
    stream: Sequence[str | int] = ("estimator",),
    workers: int = 1,
    antithetic: bool = False,
    block: int = DEFAULT_BLOCK,
):
    """Mean and standard error of per-draw columns ``columns(draws)`` (shape ``(count, m, k)``)."""
    _check(samples)
    return run_blocks(
        _block_runner(scheme, n, columns, antithetic),
        samples,
        seed,
        tuple(stream) + (scheme.name, n),
        workers=workers,
        block=block,
    )


def estimate_kinds(
    scheme: ApproximationScheme,
    phi: TestFunction | str,
    chi: TestFunction | str,
    n: int,
    samples: int,
    *,
    kinds: Sequence[Kind] = KINDS,
    common_random_numbers: bool = True,
    seed: int = 0,
    workers: int = 1,
    antithetic: bool = False,
) -> dict[Kind, BiasEstimate]:
    """Estimate several kinds at once, on shared paths (default) or on independent streams."""
    phi, chi = as_function(phi, scheme.dimension), as_function(chi, scheme.dimension)
    alpha = scheme.alpha(n)
    kinds = [Kind(k) for k in kinds]

    def columns_for(ks):
        def columns(draws):
            (py, pn), (cy, cn) = _values(draws, phi, chi)
            return np.stack([integrand(k, alpha, py, pn, cy, cn) for k in ks], axis=-1)

        return columns

    out = {}
    if common_random_numbers:
        mom = monte_carlo(scheme, n, columns_for(kinds), samples, seed=seed, workers=workers, antithetic=antithetic)
        for i, k in enumerate(kinds):
            out[k] = BiasEstimate(k, phi.label, chi.label, n, float(mom.mean[i]), float(mom.stderr[i]), samples)
    else:
        for k in kinds:
            mom = monte_carlo(
                scheme, n, columns_for([k]), samples,
                seed=seed, stream=("estimator", k.value), workers=workers, antithetic=antithetic,
            )
            out[k] = BiasEstimate(k, phi.label, chi.label, n, float(mom.mean[0]), float(mom.stderr[0]), samples)
    return out


def estimate_bias(
    kind: Kind | str,
    scheme: ApproximationScheme,
    phi: TestFunction | str,
    chi: TestFunction | str,
    n: int,
    samples: int,
    **kwargs,
) -> BiasEstimate:
    """Monte Carlo estimate of E_Y[B[phi] chi] at level n for one kind B."""
    kind = Kind(kind)
    return estimate_kinds(scheme, phi, chi, n, samples, kinds=[kind], **kwargs)[kind]


def reference_value(
    kind: Kind | str,
    structure: DirichletStructure,
    phi: TestFunction | str,
    chi: TestFunction | str,
    *,
    order: int = 96,
) -> float | None:
    """E_Y[B[phi] chi] from the analytic operators, by quadrature over the structure's measure."""
    kind = Kind(kind)
    d = structure.dimension
    phi, chi = as_function(phi, d), as_function(chi, d)

    def fn(y):
        ops = scheme_operators(structure, phi, y)
        val = {
            Kind.THEORETICAL: ops.a_bar,
            Kind.PRACTICAL: ops.a_under,
            Kind.SYMMETRIC: ops.a_tilde,
            Kind.SINGULAR: ops.a_slash,
        }[kind]
        if val is None:
            raise LookupError
        return val * chi(y)

    try:
        return structure.measure.expectation(fn, order=order)
    except LookupError:
        return None


@dataclass(frozen=True)
class RelationResiduals:
    symmetric: float
    singular: float
    symmetric_stderr: float
    singular_stderr: float

    def within(self, k: float = 3.0) -> bool:
        return abs(self.symmetric) <= k * self.symmetric_stderr and abs(self.singular) <= k * self.singular_stderr


def check_relations(estimates: Mapping[Kind, BiasEstimate]) -> RelationResiduals:
    """Residuals of A_tilde = (A_bar + A_under)/2 and A_slash = (A_bar - A_under)/2."""
    try:
        t, p, s, g = (estimates[k] for k in KINDS)
    except KeyError as exc:
        raise ValueError(f"missing estimate for {exc.args[0]}") from None
    keys = {(e.phi, e.chi, e.n) for e in (t, p, s, g)}
    if len(keys) != 1:
        raise ValueError(f"estimates refer to different (phi, chi, n): {sorted(keys)}")
    r_sym = s.value - 0.5 * (t.value + p.value)
    r_sing = g.value - 0.5 * (t.value - p.value)
    half = 0.25 * (t.stderr**2 + p.stderr**2)
    return RelationResiduals(
        r_sym, r_sing, math.sqrt(s.stderr**2 + half), math.sqrt(g.stderr**2 + half)
    )


def rounding_bound(estimates: Mapping[Kind, BiasEstimate], ulps: float = 64.0) -> float:
    """Floating-point slack for the pathwise identities.

    Summation error scales with E|X| <= sqrt(E[X^2]), recovered from each
    estimate's mean and stderr; ``ulps`` covers the log2(N) depth of the tree.
    """
    scale = sum(math.sqrt(e.stderr**2 * e.samples + e.value**2) for e in estimates.values())
    return ulps * np.finfo(float).eps * max(scale, np.finfo(float).tiny)


@dataclass(frozen=True)
class LocalityResult:
    levels: tuple[int, ...]
    values: tuple[float, ...]
    stderrs: tuple[float, ...]
    fit: RateFit | None

    @property
    def slope(self) -> float:
        return self.fit.slope if self.fit is not None else float("nan")

    @property
    def local(self) -> bool:
        if all(v == 0 for v in self.values):
            return True
        decreasing = all(b < a for a, b in zip(self.values, self.values[1:]))
        return decreasing and self.slope <= -1.0


def locality_test(
    scheme: ApproximationScheme,
    phi: TestFunction | str,
    levels: Sequence[int],
    samples: int,
    *,
    seed: int = 0,
    workers: int = 1,
) -> LocalityResult:
    """alpha_n E[(phi(Y_n) - phi(Y))^4] across levels and its log-log slope."""
    levels = list(levels)
    if len(levels) < 3 or any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("locality_test needs at least 3 increasing levels")
    phi = as_function(phi, scheme.dimension)
    vals, errs = [], []
    for n in levels:
        alpha = scheme.alpha(n)
        mom = monte_carlo(
            scheme, n, lambda dr: (alpha * (phi(dr.yn) - phi(dr.y)) ** 4)[..., None], samples,
            seed=seed, stream=("locality",), workers=workers,
        )
        vals.append(float(mom.mean[0]))
        errs.append(float(mom.stderr[0]))
    fit = rate_fit(levels, vals) if all(v > 0 for v in vals) else None
    return LocalityResult(tuple(levels), tuple(vals), tuple(errs), fit)


@dataclass(frozen=True)
class FirstOrderResult:
    kind: Kind
    residual: float
    stderr: float


def first_order_test(
    kind: Kind | str,
    scheme: ApproximationScheme,
    phi: TestFunction | str,
    chi: TestFunction | str,
    n: int,
    samples: int,
    *,
    psi: TestFunction | str = "1",
    seed: int = 0,
    workers: int = 1,
    antithetic: bool = False,
) -> FirstOrderResult:
    """Weak-form Leibniz residual E_Y[(B[phi chi] - B[phi] chi - phi B[chi]) psi] from the finite-level integrands."""
    kind = Kind(kind)
    d = scheme.dimension
    phi, chi, psi = (as_function(f, d) for f in (phi, chi, psi))
    alpha = scheme.alpha(n)

    def columns(draws):
        (py, pn), (cy, cn), (sy, sn) = _values(draws, phi, chi, psi)
        r = (
            integrand(kind, alpha, py * cy, pn * cn, sy, sn)
            - integrand(kind, alpha, py, pn, cy * sy, cn * sn)
            - integrand(kind, alpha, cy, cn, py * sy, pn * sn)
        )
        return r[..., None]

    mom = monte_carlo(
        scheme, n, columns, samples, seed=seed, stream=("first-order", kind.value), workers=workers, antithetic=antithetic
    )
    return FirstOrderResult(kind, float(mom.mean[0]), float(mom.stderr[0]))


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float


@dataclass(frozen=True)
class VarianceForms:
    theoretical: Estimate
    practical: Estimate
    operator_theoretical: float | None = None
    operator_practical: float | None = None
    gamma_reference: float | None = None

    @property
    def difference(self) -> float:
        return self.theoretical.value - self.practical.value

    @property
    def combined_stderr(self) -> float:
        return math.hypot(self.theoretical.stderr, self.practical.stderr)


def variance_forms(
    scheme: ApproximationScheme,
    phi: TestFunction | str,
    chi: TestFunction | str,
    psi: TestFunction | str,
    n: int,
    samples: int,
    *,
    seed: int = 0,
    workers: int = 1,
    antithetic: bool = False,
    order: int = 96,
) -> VarianceForms:
    """Theoretical (psi(Y)) and practical (psi(Y_n)) variances, plus their operator-side values when available."""
    d = scheme.dimension
    phi, chi, psi = (as_function(f, d) for f in (phi, chi, psi))
    alpha = scheme.alpha(n)

    def columns(draws):
        (py, pn), (cy, cn), (sy, sn) = _values(draws, phi, chi, psi)
        prod = alpha * (pn - py) * (cn - cy)
        return np.stack([prod * sy, prod * sn], axis=-1)

    mom = monte_carlo(scheme, n, columns, samples, seed=seed, stream=("variance-forms",), workers=workers, antithetic=antithetic)
    theo = Estimate(float(mom.mean[0]), float(mom.stderr[0]))
    prac = Estimate(float(mom.mean[1]), float(mom.stderr[1]))

    s = scheme.reference
    if s is None or s.measure is None:
        return VarianceForms(theo, prac)
    phipsi = phi * psi

    def gamma_side(y):
        return s.square_field(phi.jet(y), y, chi.jet(y)) * psi(y)

    gamma_ref = s.measure.expectation(gamma_side, order=order)
    if s.drift is None:
        return VarianceForms(theo, prac, gamma_reference=gamma_ref)

    def op_side(y, practical: bool):
        a = scheme_operators(s, phipsi, y)
        b = scheme_operators(s, psi, y)
        c = scheme_operators(s, phi, y)
        first, second = (a.a_bar, b.a_bar) if practical else (a.a_under, b.a_under)
        third = c.a_under if practical else c.a_bar
        return -first * chi(y) + second * phi(y) * chi(y) - third * chi(y) * psi(y)

    return VarianceForms(
        theo,
        prac,
        s.measure.expectation(lambda y: op_side(y, False), order=order),
        s.measure.expectation(lambda y: op_side(y, True), order=order),
        gamma_ref,
    )


def battery(dimension: int = 1, radius: float = 4.0) -> dict[str, TestFunction]:
    """Default test functions: 1, windowed coordinates, sin, cos and a product, all in C^2_b."""
    from .jet2 import Bounds

    out: dict[str, TestFunction] = {"1": TestFunction.constant(1.0, dimension)}
    trig = Bounds(1.0, 1.0, 1.0)
    for i in range(dimension):
        # x * win(x / r): |f| <= 2r, |f'| <= 1 + 2 * 1.875, |f''| <= 2 * 1.875 / r + 2 * 5.774 / r
        text = f"x{i} * win(x{i} / {radius!r})"
        out[f"x{i}"] = TestFunction.parse(
            text, dimension, Bounds(2 * radius, 1 + 2 * 1.875, (2 * 1.875 + 2 * 5.774) / radius), name=f"x{i}w"
        )
        out[f"sin(x{i})"] = TestFunction.parse(f"sin(x{i})", dimension, trig)
        out[f"cos(x{i})"] = TestFunction.parse(f"cos(x{i})", dimension, trig)
    prod = out["sin(x0)"] * out["cos(x0)"]
    out["sin(x0)*cos(x0)"] = TestFunction(prod.expr, dimension, prod.bounds, "sin(x0)*cos(x0)")
    return out


CSV_COLUMNS = ("scheme", "kind", "phi", "chi", "n", "N", "estimate", "stderr", "reference", "z_score")
