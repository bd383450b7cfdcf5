import math

import numpy as np
import pytest
from scipy.integrate import quad

from errorcalc.estimation import (
    KINDS,
    BiasEstimate,
    Kind,
    battery,
    check_relations,
    estimate_bias,
    estimate_kinds,
    first_order_test,
    locality_test,
    reference_value,
    rounding_bound,
    variance_forms,
)
from errorcalc.jet2 import TestFunction, sample_bounds
from errorcalc.laws import NormalLaw, UniformLaw
from errorcalc.schemes import binary_digit_scheme, gaussian_perturbation, graduation_scheme, polya_scheme

SCHEMES = {
    "binary": binary_digit_scheme,
    "polya": lambda: polya_scheme(1000),
    "graduation": lambda: graduation_scheme(NormalLaw()),
    "perturbation": gaussian_perturbation,
}
PERIODIC_COS = "cos(2 * pi * x0)"
PERIODIC_SIN = "sin(2 * pi * x0)"


def gaussian_mean(fn):
    return quad(lambda y: fn(y) * math.exp(-0.5 * y * y) / math.sqrt(2 * math.pi), -12, 12, epsabs=1e-13)[0]


@pytest.mark.parametrize("name", SCHEMES)
def test_constant_phi_gives_zero(name):
    scheme = SCHEMES[name]()
    out = estimate_kinds(scheme, "2.5", "sin(x0)", 6, 5000)
    for e in out.values():
        assert e.value == 0.0 and e.stderr == 0.0


def test_graduation_theoretical_bias_cos():
    scheme = graduation_scheme(NormalLaw())
    ref = -math.exp(-0.5) / 24
    assert reference_value(Kind.THEORETICAL, scheme.reference, "cos(x0)", "1") == pytest.approx(ref, rel=1e-12)
    e = estimate_bias("theoretical", scheme, "cos(x0)", "1", 32, 1_000_000, antithetic=True, seed=4)
    assert abs(e.value - ref) <= 3 * e.stderr + 1e-4 * abs(ref)


def test_perturbation_theoretical_bias_cos():
    scheme = gaussian_perturbation()
    ref = -1.5 * math.exp(-0.5)
    oracle = gaussian_mean(lambda y: -y * math.sin(y) - 0.5 * math.cos(y))
    assert oracle == pytest.approx(ref, rel=1e-12)
    assert reference_value(Kind.THEORETICAL, scheme.reference, "cos(x0)", "1") == pytest.approx(ref, rel=1e-12)
    k = 10
    e = estimate_bias(Kind.THEORETICAL, scheme, "cos(x0)", "1", k, 1_000_000, antithetic=True, seed=5)
    assert abs(e.value - ref) <= 3 * e.stderr + 2 * 2.0**-k


def test_perturbation_symmetric_bias_cos():
    scheme = gaussian_perturbation()
    ref = gaussian_mean(lambda y: -0.5 * math.cos(y) + 0.5 * y * math.sin(y))
    assert ref == pytest.approx(0.0, abs=1e-12)  # Stein: E[Y sin Y] = E[cos Y]
    assert reference_value(Kind.SYMMETRIC, scheme.reference, "cos(x0)", "1") == pytest.approx(ref, abs=1e-12)
    e = estimate_bias(Kind.SYMMETRIC, scheme, "cos(x0)", "x0 * win(x0 / 4)", 8, 1_000_000, seed=6)
    r = reference_value(Kind.SYMMETRIC, scheme.reference, "cos(x0)", "x0 * win(x0 / 4)")
    assert abs(e.value - r) <= 3 * e.stderr + 2 * 2.0**-8


def test_crn_relations_hold_up_to_rounding():
    scheme = graduation_scheme(NormalLaw())
    est = estimate_kinds(scheme, "cos(x0)", "sin(x0)", 16, 200_000, seed=1)
    r = check_relations(est)
    bound = rounding_bound(est)
    assert abs(r.symmetric) <= bound and abs(r.singular) <= bound
    assert bound < 1e-12


def test_independent_relations_within_stderr():
    scheme = gaussian_perturbation()
    est = estimate_kinds(scheme, "cos(x0)", "sin(x0)", 6, 400_000, common_random_numbers=False, seed=2)
    assert check_relations(est).within(3.0)


def test_relations_reject_mismatched_estimates():
    est = {k: BiasEstimate(k, "cos(x0)", "1", 8, 0.0, 0.1, 1000) for k in KINDS}
    est[Kind.PRACTICAL] = BiasEstimate(Kind.PRACTICAL, "cos(x0)", "1", 16, 0.0, 0.1, 1000)
    with pytest.raises(ValueError, match="different"):
        check_relations(est)
    del est[Kind.SINGULAR]
    with pytest.raises(ValueError, match="missing"):
        check_relations(est)


def test_singular_vanishes_for_uniform_graduation_without_flux():
    scheme = graduation_scheme(UniformLaw())
    e = estimate_bias(Kind.SINGULAR, scheme, PERIODIC_COS, "1", 32, 1_000_000, seed=3)
    assert abs(e.value) <= 3 * e.stderr


def test_singular_boundary_term_for_uniform_graduation():
    # interior A_slash = 0 but E[A_slash[x^2]] = -(1/24)[phi' chi]_0^1 = -1/12 on the unit interval
    scheme = graduation_scheme(UniformLaw())
    e = estimate_bias(Kind.SINGULAR, scheme, "sq(x0)", "1", 64, 200_000, seed=3)
    assert abs(e.value + 1 / 12) <= 3 * e.stderr + 1e-3


def test_symmetric_operator_is_symmetric():
    scheme = graduation_scheme(NormalLaw())
    a = estimate_bias(Kind.SYMMETRIC, scheme, "cos(x0)", "sin(x0)", 16, 300_000, seed=11)
    b = estimate_bias(Kind.SYMMETRIC, scheme, "sin(x0)", "cos(x0)", 16, 300_000, seed=12)
    assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_results_do_not_depend_on_workers():
    scheme = graduation_scheme(NormalLaw())
    one = estimate_kinds(scheme, "cos(x0)", "sin(x0)", 16, 300_000, seed=7, workers=1)
    four = estimate_kinds(scheme, "cos(x0)", "sin(x0)", 16, 300_000, seed=7, workers=4)
    assert one == four


def test_stderr_scales_with_samples():
    scheme = graduation_scheme(NormalLaw())
    a = estimate_bias(Kind.SYMMETRIC, scheme, "cos(x0)", "cos(x0)", 16, 200_000, seed=8)
    b = estimate_bias(Kind.SYMMETRIC, scheme, "cos(x0)", "cos(x0)", 16, 400_000, seed=9)
    assert abs(b.stderr / a.stderr - 1 / math.sqrt(2)) <= 0.3 / math.sqrt(2)


def test_sample_errors():
    scheme = graduation_scheme(NormalLaw())
    with pytest.raises(ValueError, match="at least"):
        estimate_bias(Kind.THEORETICAL, scheme, "cos(x0)", "1", 8, 999)
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(FloatingPointError):
        estimate_bias(Kind.THEORETICAL, scheme, "exp(exp(exp(3 * x0)))", "1", 8, 5000)


def test_locality_graduation_slope():
    out = locality_test(graduation_scheme(NormalLaw()), "x0 * win(x0 / 4)", [8, 16, 32, 64, 128], 100_000)
    assert abs(out.slope + 2) <= 0.3 and out.local


def test_locality_constant():
    out = locality_test(graduation_scheme(NormalLaw()), "1", [4, 8, 16], 2000)
    assert out.values == (0.0, 0.0, 0.0) and out.local and math.isnan(out.slope)


def test_locality_binary_digits():
    out = locality_test(binary_digit_scheme(), "x0", [2, 4, 6, 8], 50_000)
    assert out.local and all(b < a / 32 for a, b in zip(out.values, out.values[1:]))


def test_locality_needs_levels():
    with pytest.raises(ValueError):
        locality_test(graduation_scheme(), "x0", [8, 16], 2000)


def test_singular_is_first_order_for_uniform_graduation():
    scheme = graduation_scheme(UniformLaw())
    r = first_order_test(Kind.SINGULAR, scheme, PERIODIC_COS, PERIODIC_SIN, 32, 500_000, psi="x0", seed=1)
    assert abs(r.residual) <= 3 * r.stderr


def test_theoretical_is_not_first_order_for_graduation():
    scheme = graduation_scheme(NormalLaw())
    phi = "x0 * win(x0 / 4)"
    r = first_order_test(Kind.THEORETICAL, scheme, phi, phi, 64, 500_000, seed=2)
    f = TestFunction.parse(phi)
    target = scheme.reference.measure.expectation(lambda y: f.jet(y).gradient[..., 0] ** 2 / 12)
    assert target > 0.08
    assert abs(r.residual - target) <= 3 * r.stderr + 1e-3


@pytest.mark.parametrize("kind", KINDS)
def test_first_order_with_constant_chi(kind):
    r = first_order_test(kind, gaussian_perturbation(), "cos(x0)", "3", 6, 5000, psi="sin(x0)")
    assert abs(r.residual) <= 1e-12


def test_variance_forms_constant_psi():
    scheme = graduation_scheme(NormalLaw())
    vf = variance_forms(scheme, "sin(x0)", "cos(x0)", "1", 32, 300_000, seed=3)
    assert vf.theoretical == vf.practical
    target = scheme.reference.measure.expectation(lambda y: -np.cos(y[:, 0]) * np.sin(y[:, 0]) / 12)
    assert vf.gamma_reference == pytest.approx(target, abs=1e-14)
    assert abs(vf.theoretical.value - target) <= 3 * vf.theoretical.stderr + 1e-4


def test_variance_forms_uniform_graduation():
    scheme = graduation_scheme(UniformLaw())
    vf = variance_forms(scheme, "sin(x0)", "sin(x0)", "cos(x0)", 64, 500_000, seed=4)
    ref = quad(lambda y: math.cos(y) ** 3 / 12, 0, 1)[0]
    assert vf.gamma_reference == pytest.approx(ref, rel=1e-12)
    assert abs(vf.difference) <= 3 * vf.combined_stderr
    for v in (vf.theoretical.value, vf.practical.value):
        assert abs(v / ref - 1) <= 0.03


def test_variance_forms_perturbation():
    scheme = gaussian_perturbation()
    vf = variance_forms(scheme, "sin(x0)", "sin(x0)", "cos(x0)", 10, 400_000, seed=5)
    assert abs(vf.difference) <= 3 * vf.combined_stderr
    # operator side: both twins agree with E[Gamma[phi] psi] because A_slash is first order here
    assert vf.operator_theoretical == pytest.approx(vf.gamma_reference, rel=1e-10)
    assert vf.operator_practical == pytest.approx(vf.gamma_reference, rel=1e-10)


def test_battery_is_bounded():
    pts = np.linspace(-12, 12, 4001)[:, None]
    for name, f in battery(1).items():
        seen = sample_bounds(f, pts)
        b = f.bounds
        assert seen.value <= b.value + 1e-12 and seen.gradient <= b.gradient + 1e-12 and seen.hessian <= b.hessian + 1e-12, name
