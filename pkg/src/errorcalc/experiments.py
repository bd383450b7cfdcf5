"""Registered verification experiments, one per checked result, each with pass/fail criteria."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable

import numpy as np

from .error_core import image_structure
from .estimation import (
    CSV_COLUMNS,
    Kind,
    check_relations,
    estimate_kinds,
    locality_test,
    monte_carlo,
    reference_value,
    rounding_bound,
    variance_forms,
)
from .jet2 import TestFunction, compose
from .laws import UniformLaw
from .rng import check_seed, substream
from .schemes import (
    binary_digit_scheme,
    graduation_scheme,
    polya_enumerated_variance,
    polya_scheme,
    scheme_from_config,
)
from .stats import EmpiricalDistribution, independence_chi2, ks_critical, ks_uniform, psi_composition_test

DIAGNOSTIC_COLUMNS = ("test_name", "statistic", "threshold", "pass")
REPORT_COLUMNS = CSV_COLUMNS + DIAGNOSTIC_COLUMNS
MIN_SAMPLES = 1000


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2 in the CLI)."""


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    scheme: dict | None = None
    battery: tuple[str, ...] = ()
    levels: tuple[int, ...] = ()
    samples: int = 0
    seed: int = 0
    out: str = "results"
    workers: int = 1
    tolerances: dict = field(default_factory=dict)

    def validate(self, registry: dict[str, "Experiment"]) -> "ExperimentConfig":
        if self.experiment not in registry:
            raise ConfigError(f"unknown experiment {self.experiment!r}; registered: {', '.join(registry)}")
        exp = registry[self.experiment]
        cfg = self
        if not cfg.levels:
            cfg = replace(cfg, levels=exp.levels)
        if not cfg.samples:
            cfg = replace(cfg, samples=exp.samples)
        if not cfg.battery:
            cfg = replace(cfg, battery=exp.battery)
        if cfg.scheme is None and exp.scheme is not None:
            cfg = replace(cfg, scheme=dict(exp.scheme))
        if not cfg.levels or any(int(n) != n or n < 0 for n in cfg.levels):
            raise ConfigError("levels must be a non-empty list of non-negative integers")
        if cfg.samples < MIN_SAMPLES:
            raise ConfigError(f"samples must be at least {MIN_SAMPLES}")
        if cfg.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            check_seed(cfg.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        unknown = set(cfg.tolerances) - set(exp.tolerances)
        if unknown:
            raise ConfigError(f"unknown tolerance keys {sorted(unknown)} for {cfg.experiment}; known: {sorted(exp.tolerances)}")
        return replace(cfg, tolerances={**exp.tolerances, **cfg.tolerances})

    def tol(self, key: str) -> float:
        return float(self.tolerances[key])


@dataclass(frozen=True)
class Criterion:
    name: str
    statistic: float
    threshold: float
    passed: bool

    def row(self) -> dict:
        return {"test_name": self.name, "statistic": self.statistic, "threshold": self.threshold, "pass": self.passed}


@dataclass
class ExperimentResult:
    experiment: str
    rows: list[dict] = field(default_factory=list)
    criteria: list[Criterion] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def estimate(self, scheme, kind, phi, chi, n, samples, value, stderr, reference=None):
        z = None
        if reference is not None:
            z = 0.0 if value == reference else (value - reference) / stderr if stderr > 0 else math.inf
        self.rows.append(
            {
                "scheme": scheme, "kind": kind, "phi": phi, "chi": chi, "n": n, "N": samples,
                "estimate": value, "stderr": stderr, "reference": reference, "z_score": z,
            }
        )

    def check(self, name: str, statistic: float, threshold: float, passed: bool | None = None) -> Criterion:
        ok = bool(statistic <= threshold) if passed is None else bool(passed)
        c = Criterion(name, float(statistic), float(threshold), ok)
        self.criteria.append(c)
        return c

    def table(self) -> list[dict]:
        return self.rows + [c.row() for c in self.criteria]


@dataclass(frozen=True)
class Experiment:
    id: str
    anchor: str
    description: str
    run: Callable[[ExperimentConfig], ExperimentResult]
    levels: tuple[int, ...]
    samples: int
    battery: tuple[str, ...] = ()
    tolerances: dict = field(default_factory=dict)
    scheme: dict | None = None

    @property
    def accepts_law(self) -> bool:
        return self.scheme is not None and self.scheme.get("scheme") == "graduation"


def _scheme(cfg: ExperimentConfig):
    try:
        return scheme_from_config(cfg.scheme)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid scheme: {exc}") from None


def _functions(cfg: ExperimentConfig, d: int) -> list[TestFunction]:
    try:
        return [TestFunction.parse(s, d) for s in cfg.battery]
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"invalid test function: {exc}") from None


# --- experiments ------------------------------------------------------------


def run_binary_bias(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    # exact: the tail bits a_k 2^-k (k > n) are independent with mean 2^-k/2 and variance 4^-k/4
    worst_b = worst_v = Fraction(0)
    for n in range(1, 31):
        b = Fraction(1, 2 ** (n + 2)) / (1 - Fraction(1, 2))
        v = Fraction(1, 4 ** (n + 2)) / (1 - Fraction(1, 4))
        worst_b = max(worst_b, abs(b * 2 ** (n + 1) - 1))
        worst_v = max(worst_v, abs(v * 12 * 4**n - 1))
    res.check("exact bias b_n 2^(n+1) = 1, n=1..30", float(worst_b), 0.0)
    res.check("exact variance v_n 12 4^n = 1, n=1..30", float(worst_v), 0.0)
    scheme = binary_digit_scheme()
    for n in cfg.levels:
        mom = monte_carlo(
            scheme, n, lambda dr: np.concatenate([dr.y - dr.yn, (dr.y - dr.yn) ** 2], axis=-1),
            cfg.samples, seed=cfg.seed, stream=("binary-bias",), workers=cfg.workers,
        )
        b_ref, v_ref = 2.0 ** -(n + 1), 4.0**-n / 12
        mean, se = float(mom.mean[0]), float(mom.stderr[0])
        res.estimate(scheme.name, "bias", "x0", "1", n, cfg.samples, mean, se, b_ref)
        res.estimate(scheme.name, "second-moment", "x0", "1", n, cfg.samples, float(mom.mean[1]), float(mom.stderr[1]), b_ref**2 + v_ref)
        res.check(f"MC bias at n={n}: |z|", abs(mean - b_ref) / se, cfg.tol("z"))
    return res


def run_polya_variance(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    worst = 0.0
    for n in range(0, 13):
        worst = max(worst, abs(float(polya_enumerated_variance(n) * 6 * (n + 2)) - 1.0))
    res.check("enumerated E[v_n] 6(n+2) = 1, n<=12", worst, 1e-12)
    scheme = polya_scheme(int((cfg.scheme or {}).get("horizon", 100_000)))
    for n in cfg.levels:
        mom = monte_carlo(
            scheme, n, lambda dr: (dr.y - dr.yn) ** 2, cfg.samples,
            seed=cfg.seed, stream=("polya-variance",), workers=cfg.workers,
        )
        ref = 1.0 / (6 * (n + 2))
        val, se = float(mom.mean[0]), float(mom.stderr[0])
        res.estimate(scheme.name, "variance", "x0", "1", n, cfg.samples, val, se, ref)
        res.check(f"simulated E[v_n] 6(n+2) at n={n}: relative error", abs(val / ref - 1.0), cfg.tol("rel"))
    return res


def run_graduation_variance(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    s = scheme.reference
    for phi in _functions(cfg, scheme.dimension):
        ref = s.measure.expectation(lambda y: s.square_field(phi.jet(y), y), order=96)
        for n in cfg.levels:
            alpha = scheme.alpha(n)
            mom = monte_carlo(
                scheme, n, lambda dr: (alpha * (phi(dr.yn) - phi(dr.y)) ** 2)[..., None], cfg.samples,
                seed=cfg.seed, stream=("graduation-variance", phi.label), workers=cfg.workers,
            )
            val, se = float(mom.mean[0]), float(mom.stderr[0])
            res.estimate(scheme.name, "variance", phi.label, phi.label, n, cfg.samples, val, se, ref)
            res.check(f"n^2 E[dphi^2] for {phi.label} at n={n}: relative error", abs(val / ref - 1.0), cfg.tol("rel"))
    return res


def run_graduation_bias(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    fns = _functions(cfg, scheme.dimension)
    phi, chi = fns[0], fns[1] if len(fns) > 1 else TestFunction.constant(1.0, scheme.dimension)
    ref = reference_value(Kind.THEORETICAL, scheme.reference, phi, chi)
    for n in cfg.levels:
        est = estimate_kinds(
            scheme, phi, chi, n, cfg.samples, kinds=[Kind.THEORETICAL],
            seed=cfg.seed, workers=cfg.workers, antithetic=scheme.supports_antithetic,
        )[Kind.THEORETICAL]
        res.estimate(scheme.name, est.kind.value, phi.label, chi.label, n, cfg.samples, est.value, est.stderr, ref)
        res.check(f"A_bar estimate at n={n}: relative error", abs(est.value / ref - 1.0), cfg.tol("rel"))
    return res


def run_graduation_afp(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    level = cfg.tol("level")
    for n in cfg.levels:
        draws = scheme.sample(n, cfg.samples, substream(cfg.seed, "graduation-afp", "scheme", n))
        y, yn = draws.y[:, 0, :], draws.yn[:, 0, :]
        v = n * (yn - y)
        for i in range(scheme.dimension):
            ks = ks_uniform(EmpiricalDistribution.of(v[:, i] + 0.5))
            res.check(f"KS uniformity of n(Y_n-Y)+1/2, coord {i}, n={n}", ks.statistic, ks_critical(ks.count, level))
            chi = independence_chi2(v[:, i], y[:, i], 20, 20, y_grid=1.0 / n)
            res.check(f"chi2 independence of n(Y_n-Y) and Y, coord {i}, n={n}", chi.statistic, chi.threshold(level))
        comp = psi_composition_test(
            scheme, lambda u: (u[:, 0] <= 0.25).astype(float), n, cfg.samples, seed=cfg.seed
        )
        frac = float(comp.values.samples.mean())
        se = math.sqrt(0.25 * 0.75 / cfg.samples)
        res.estimate(scheme.name, "indicator-fraction", "1{V<=1/4}", "1", n, cfg.samples, frac, se, 0.25)
        res.check(f"psi = 1[0,1/4]: two-sample KS, n={n}", comp.ks.statistic, ks_critical(comp.ks.count, level))
    return res


def run_operator_relations(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    fns = _functions(cfg, scheme.dimension)
    phi, chi = fns[0], fns[1]
    for n in cfg.levels:
        crn = estimate_kinds(scheme, phi, chi, n, cfg.samples, seed=cfg.seed, workers=cfg.workers)
        ind = estimate_kinds(
            scheme, phi, chi, n, cfg.samples, common_random_numbers=False, seed=cfg.seed, workers=cfg.workers
        )
        for tag, group in (("crn", crn), ("independent", ind)):
            for e in group.values():
                res.estimate(f"{scheme.name}/{tag}", e.kind.value, e.phi, e.chi, n, e.samples, e.value, e.stderr)
        r = check_relations(crn)
        bound = rounding_bound(crn)
        res.check(f"CRN residual A_tilde-(A_bar+A_under)/2, n={n}", abs(r.symmetric), bound)
        res.check(f"CRN residual A_slash-(A_bar-A_under)/2, n={n}", abs(r.singular), bound)
        r = check_relations(ind)
        k = cfg.tol("z")
        res.check(f"independent residual (symmetric) in stderr units, n={n}", abs(r.symmetric) / r.symmetric_stderr, k)
        res.check(f"independent residual (singular) in stderr units, n={n}", abs(r.singular) / r.singular_stderr, k)
    return res


def run_locality(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    for phi in _functions(cfg, scheme.dimension):
        out = locality_test(scheme, phi, sorted(cfg.levels), cfg.samples, seed=cfg.seed, workers=cfg.workers)
        for n, v, se in zip(out.levels, out.values, out.stderrs):
            res.estimate(scheme.name, "fourth-moment", phi.label, "1", n, cfg.samples, v, se)
        target = cfg.tol("slope")
        res.check(f"log-log slope for {phi.label} (target {target})", abs(out.slope - target), cfg.tol("slope_tol"))
        res.check(f"values decreasing for {phi.label}", float(not out.local), 0.0)
    return res


def run_asymptotic_calculus(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    d = scheme.dimension
    F = TestFunction.parse("x0 * x1", 2)
    f1, f2 = TestFunction.parse("sin(x0)", d), TestFunction.parse("cos(x0)", d)
    s = scheme.reference

    def operator_side(y):
        j1, j2 = f1.jet(y), f2.jet(y)
        grad = F.jet(np.stack([j1.value, j2.value], axis=-1)).gradient
        jets = (j1, j2)
        total = 0.0
        for i in range(2):
            for j in range(2):
                total = total + grad[..., i] * grad[..., j] * s.square_field(jets[i], y, jets[j])
        return total

    ref = s.measure.expectation(operator_side, order=96)
    Ff = F.compose(f1, f2)
    for n in cfg.levels:
        alpha = scheme.alpha(n)
        mom = monte_carlo(
            scheme, n, lambda dr: (alpha * (Ff(dr.yn) - Ff(dr.y)) ** 2)[..., None], cfg.samples,
            seed=cfg.seed, stream=("asymptotic-calculus",), workers=cfg.workers,
        )
        val, se = float(mom.mean[0]), float(mom.stderr[0])
        res.estimate(scheme.name, "variance", str(Ff), str(Ff), n, cfg.samples, val, se, ref)
        res.check(f"alpha E[d(F o f)^2] vs E[F'_i F'_j Gamma[f_i,f_j]] at n={n}: relative error", abs(val / ref - 1), cfg.tol("rel"))
        # composition of jets agrees with the composed expression at the sampled points
        pts = np.linspace(0.05, 0.95, 7)[:, None]
        direct = Ff.jet(pts)
        chained = compose(F, [f1.jet(pts), f2.jet(pts)])
        err = float(np.max(np.abs(direct.hessian - chained.hessian)))
        res.check("jet chain rule agrees with composed expression", err, 1e-12)
    return res


def run_perturbation_abar(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    fns = _functions(cfg, scheme.dimension)
    phi, chi = fns[0], fns[1] if len(fns) > 1 else TestFunction.constant(1.0, scheme.dimension)
    ref = reference_value(Kind.THEORETICAL, scheme.reference, phi, chi)
    zs = scheme.g_covariance_zscores()
    res.check("G covariance vs identity: max |z|", float(np.max(np.abs(zs))), cfg.tol("z"))
    for k in cfg.levels:
        est = estimate_kinds(
            scheme, phi, chi, k, cfg.samples, kinds=[Kind.THEORETICAL],
            seed=cfg.seed, workers=cfg.workers, antithetic=scheme.supports_antithetic,
        )[Kind.THEORETICAL]
        res.estimate(scheme.name, est.kind.value, phi.label, chi.label, k, cfg.samples, est.value, est.stderr, ref)
        res.check(f"eps^-1 E[phi(Y_eps)-phi(Y)] at eps=1/alpha_{k}: relative error", abs(est.value / ref - 1), cfg.tol("rel"))
    return res


def run_image_structure(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = graduation_scheme(UniformLaw())
    s_in = scheme.reference
    phi_map = TestFunction.parse((cfg.scheme or {}).get("map", "sq(x0)"), 1)
    bins = int((cfg.scheme or {}).get("bins", 64))
    s_out = image_structure(s_in, phi_map, samples=cfg.samples, bins=bins, seed=cfg.seed)
    res.check("empty conditional bins", float(s_out.diagnostics["missing"]), 0.0)
    x = s_in.measure.sample(substream(cfg.seed, "image-structure", "direct"), cfg.samples)
    y = s_out.measure.sample(substream(cfg.seed, "image-structure", "output"), cfg.samples)
    for u in _functions(cfg, 1):
        uphi = u.compose(phi_map)
        direct = s_in.square_field(uphi.jet(x), x)
        image = s_out.square_field(u.jet(y), y)
        m1, m2 = float(direct.mean()), float(image.mean())
        se1 = float(direct.std(ddof=1)) / math.sqrt(cfg.samples)
        se2 = float(image.std(ddof=1)) / math.sqrt(cfg.samples)
        se = math.hypot(se1, se2)
        res.estimate("graduation-image", "square-field", u.label, u.label, 0, cfg.samples, m2, se2, m1)
        stat = 0.0 if m1 == m2 else abs(m1 - m2) / se
        res.check(f"E[Gamma_out[{u.label}]] vs E[Gamma_in[{u.label} o Phi]] in stderr units", stat, cfg.tol("z"))
    return res


def run_variance_forms(cfg: ExperimentConfig) -> ExperimentResult:
    res = ExperimentResult(cfg.experiment)
    scheme = _scheme(cfg)
    fns = _functions(cfg, scheme.dimension)
    phi, psi = fns[0], fns[1]
    for n in cfg.levels:
        vf = variance_forms(scheme, phi, phi, psi, n, cfg.samples, seed=cfg.seed, workers=cfg.workers)
        ref = vf.gamma_reference
        res.estimate(scheme.name, "theoretical-variance", phi.label, psi.label, n, cfg.samples, vf.theoretical.value, vf.theoretical.stderr, ref)
        res.estimate(scheme.name, "practical-variance", phi.label, psi.label, n, cfg.samples, vf.practical.value, vf.practical.stderr, ref)
        res.check(f"|theoretical - practical| in combined stderr units, n={n}", abs(vf.difference) / vf.combined_stderr, cfg.tol("z"))
        res.check(f"theoretical vs E[Gamma[phi] psi], n={n}: relative error", abs(vf.theoretical.value / ref - 1), cfg.tol("rel"))
        res.check(f"practical vs E[Gamma[phi] psi], n={n}: relative error", abs(vf.practical.value / ref - 1), cfg.tol("rel"))
    return res


REGISTRY: dict[str, Experiment] = {
    e.id: e
    for e in [
        Experiment("binary-bias", "binary digits: bias 2^-(n+1), variance 4^-n/12", "exact and MC bias of digit truncation",
                   run_binary_bias, (10,), 1_000_000, (), {"z": 3.0}),
        Experiment("polya-variance", "Polya urn: E[v_n] = 1/(6(n+2))", "exact enumeration and urn simulation",
                   run_polya_variance, (50,), 100_000, (), {"rel": 0.03}),
        Experiment("graduation-variance", "graduation: n^2 E[dphi^2] -> E[phi'^2]/12", "variance limit of reading errors",
                   run_graduation_variance, (64,), 1_000_000, ("sq(x0) * win(x0 / 2)",), {"rel": 0.02}, {"scheme": "graduation", "law": {"kind": "uniform"}}),
        Experiment("graduation-bias", "graduation: A_bar = Laplacian/24", "theoretical bias of reading errors",
                   run_graduation_bias, (64,), 10_000_000, ("cos(x0)", "1"), {"rel": 0.05}, {"scheme": "graduation", "law": {"kind": "normal"}}),
        Experiment("graduation-afp", "arbitrary functions principle", "uniformity and independence of n(Y_n - Y)",
                   run_graduation_afp, (100,), 100_000, (), {"level": 0.01}, {"scheme": "graduation", "law": {"kind": "normal"}}),
        Experiment("operator-relations", "A_tilde = (A_bar+A_under)/2, A_slash = (A_bar-A_under)/2", "pathwise and statistical operator algebra",
                   run_operator_relations, (16,), 1_000_000, ("cos(x0)", "sin(x0)"), {"z": 3.0}, {"scheme": "graduation", "law": {"kind": "normal"}}),
        Experiment("locality", "locality: alpha_n E[dphi^4] -> 0", "fourth-moment decay rate",
                   run_locality, (8, 16, 32, 64, 128), 200_000, ("x0 * win(x0 / 4)",), {"slope": -2.0, "slope_tol": 0.3}, {"scheme": "graduation", "law": {"kind": "normal"}}),
        Experiment("asymptotic-calculus", "functional calculus for Gamma", "variance of F(f1, f2) vs the chain rule",
                   run_asymptotic_calculus, (64,), 1_000_000, (), {"rel": 0.03}, {"scheme": "graduation", "law": {"kind": "uniform"}}),
        Experiment("perturbation-abar", "Y + eps Z + sqrt(eps) T G: A_bar = z phi' + phi''/2", "small-perturbation theoretical bias",
                   run_perturbation_abar, (10,), 10_000_000, ("cos(x0)", "1"), {"rel": 0.02, "z": 3.0}, {"scheme": "perturbation", "model": "gaussian"}),
        Experiment("image-structure", "image Dirichlet structure under Phi", "square field pushed through Phi(x) = x^2",
                   run_image_structure, (0,), 1_000_000,
                   ("x0 * win(x0 / 4)", "sin(x0)", "cos(x0)", "sin(x0) * cos(x0)"), {"z": 3.0}),
        Experiment("variance-forms", "theoretical vs practical variance", "variance with a weight psi(Y) or psi(Y_n)",
                   run_variance_forms, (64,), 1_000_000, ("sin(x0)", "cos(x0)"), {"z": 3.0, "rel": 0.03}, {"scheme": "graduation", "law": {"kind": "uniform"}}),
    ]
}


def run_experiment(cfg: ExperimentConfig, registry: dict[str, Experiment] | None = None) -> ExperimentResult:
    registry = REGISTRY if registry is None else registry
    cfg = cfg.validate(registry)
    return registry[cfg.experiment].run(cfg)
