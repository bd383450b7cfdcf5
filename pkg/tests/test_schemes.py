import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errorcalc.jet2 import TestFunction
from errorcalc.laws import ExprDensityLaw, NormalLaw, UniformLaw, law_from_json
from errorcalc.rng import substream
from errorcalc.schemes import (
    PerturbationScheme,
    binary_conditional_moments,
    binary_digit_scheme,
    binary_reference_bias,
    binary_reference_variance,
    conditional_bias_profile,
    gaussian_perturbation,
    graduate,
    graduation_scheme,
    polya_enumerated_variance,
    polya_scheme,
    polya_white_distribution,
    scheme_from_config,
    truncate_bits,
)


def bump(y):
    """Normalised C^2 bump on [-1, 1]: (1 - y^2)^3 * 35/32."""
    y = np.asarray(y, dtype=float).reshape(-1)
    return np.where(np.abs(y) < 1, 35 / 32 * (1 - y * y) ** 3, 0.0)


# --- binary digits ----------------------------------------------------------


def test_truncation_example():
    assert truncate_bits([1, 0, 1, 1], 2) == 0.5


def test_binary_reference_values():
    assert binary_reference_bias(10) == Fraction(1, 2048)
    assert binary_reference_variance(5) == Fraction(1, 12288)


@pytest.mark.parametrize("n", range(1, 31))
def test_binary_closed_forms(n):
    assert binary_reference_bias(n) * 2 ** (n + 1) == 1
    assert binary_reference_variance(n) * 12 * 4**n == 1


@pytest.mark.parametrize("prefix", [(0,), (1, 0, 1), (1, 1, 1, 0, 0)])
def test_binary_conditional_moments_converge(prefix):
    n, depth = len(prefix), 14
    mean, var = binary_conditional_moments(prefix, depth)
    # finite tail: the geometric sums stop after depth terms
    assert mean == binary_reference_bias(n) * (1 - Fraction(1, 2**depth))
    assert var == binary_reference_variance(n) * (1 - Fraction(1, 4**depth))


def test_binary_sampler_truncates_exactly():
    s = binary_digit_scheme()
    d = s.sample(7, 10_000, substream(0, "t"))
    err = (d.y - d.yn)[..., 0]
    assert np.all(err >= 0) and np.all(err < 2.0**-7)
    assert np.all(d.yn * 2**7 == np.floor(d.yn * 2**7))
    assert s.alpha(3) < s.alpha(4)


# --- Polya urn --------------------------------------------------------------


@pytest.mark.parametrize("n", range(0, 13))
def test_polya_white_count_is_uniform(n):
    dist = polya_white_distribution(n)
    assert dist == {w: Fraction(1, n + 1) for w in range(1, n + 2)}


@pytest.mark.parametrize("n", range(0, 13))
def test_polya_expected_variance_by_enumeration(n):
    assert polya_enumerated_variance(n) * 6 * (n + 2) == 1


def test_polya_ten_draws():
    assert float(polya_enumerated_variance(10)) == pytest.approx(1 / 72, rel=1e-15)


def test_polya_martingale():
    s = polya_scheme(200)
    rng = substream(1, "martingale")
    n = 20
    x = s.simulate(n, 100_000, rng)
    x_next = x + ((rng.random(x.shape) <= x) - x) / (n + 3)
    diff = x_next - x
    assert abs(diff.mean()) <= 3 * diff.std() / math.sqrt(diff.size)


def test_polya_start_and_horizon():
    s = polya_scheme(1000)
    assert np.all(s.simulate(0, 5, substream(0, "p")) == 0.5)
    with pytest.raises(ValueError, match="horizon"):
        s.sample(1001, 10, substream(0, "p"))


def test_polya_tail_matches_recurrence_in_law():
    """The beta-binomial jump to the horizon has the law of running the urn to the horizon."""
    n, horizon, count = 5, 60, 40_000
    jump = polya_scheme(horizon).sample(n, count, substream(2, "jump")).y[:, 0, 0]
    slow = polya_scheme(horizon).simulate(horizon, count, substream(2, "slow"))
    for k in (1, 2):
        a, b = jump**k, slow**k
        assert abs(a.mean() - b.mean()) <= 4 * math.hypot(a.std(), b.std()) / math.sqrt(count)


# --- graduation -------------------------------------------------------------


def test_graduation_example():
    assert graduate(0.237, 10) == pytest.approx(0.25, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50, allow_nan=False), st.integers(1, 1000))
def test_graduation_offsets_and_grid(y, n):
    yn = float(graduate(y, n))
    assert -0.5 <= n * (yn - y) <= 0.5 + 1e-9
    k = n * yn - 0.5
    assert abs(k - round(k)) <= 1e-9 * max(1.0, abs(k))


def test_graduation_reference_square_field():
    s = graduation_scheme(NormalLaw()).reference
    phi = TestFunction.parse("sq(x0)")
    assert s.square_field(phi.jet([1.0]), np.array([1.0])) == pytest.approx(1 / 3)


def test_graduation_multidimensional_sampler():
    s = graduation_scheme(UniformLaw(0, 1, 3))
    d = s.sample(16, 1000, substream(0, "g3"))
    assert d.y.shape == (1000, 1, 3)
    assert np.all(np.abs(16 * (d.yn - d.y)) <= 0.5)


def test_graduation_antithetic_weights():
    s = graduation_scheme(NormalLaw())
    d = s.sample(8, 1000, substream(0, "anti"), antithetic=True)
    np.testing.assert_allclose(d.y[:, 0] + d.y[:, 1], 2 * d.yn[:, 0])
    np.testing.assert_allclose(d.weight[:, 1], np.exp(-0.5 * (d.y[:, 1, 0] ** 2 - d.y[:, 0, 0] ** 2)))


def test_custom_density_law():
    law = law_from_json({"kind": "custom-expr", "density": "1 + x0", "low": 0, "high": 1})
    assert isinstance(law, ExprDensityLaw)
    y = law.sample(substream(0, "custom"), 200_000)
    assert y.mean() == pytest.approx(5 / 9, abs=3e-3)
    np.testing.assert_allclose(law.score(np.array([[0.5]])), [[1 / 1.5]])


def test_conditional_bias_profile_square():
    phi = TestFunction.parse("sq(x0)")
    errs = [abs(conditional_bias_profile(phi, n, bump, (-1, 1)) - 1 / 12) for n in (8, 32, 128)]
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-9


def test_conditional_bias_profile_linear():
    phi = TestFunction.parse("3 * x0 - 1")
    for n in (4, 10, 33):
        assert abs(conditional_bias_profile(phi, n, lambda y: np.ones(len(y)), (-2, 2))) < 1e-12


def test_conditional_bias_profile_cos():
    from scipy.integrate import quad

    phi = TestFunction.parse("cos(x0)")
    target = quad(lambda y: -math.cos(y) * bump(y)[0] / 24, -1, 1)[0]
    vals = [conditional_bias_profile(phi, n, bump, (-1, 1)) for n in (16, 64, 256)]
    errs = [abs(v - target) for v in vals]
    assert errs[-1] < 1e-4 and errs[0] > errs[-1]


def test_conditional_bias_profile_errors():
    with pytest.raises(ValueError):
        conditional_bias_profile(TestFunction.parse("x0"), 4, bump, (-np.inf, 1))


# --- perturbation -----------------------------------------------------------


def test_perturbation_trivial():
    law = NormalLaw()
    s = PerturbationScheme(law, lambda y, rng: np.zeros_like(y), lambda y, rng: np.zeros(y.shape + (1,)), NormalLaw())
    d = s.sample(5, 100, substream(0, "z"))
    assert np.array_equal(d.y, d.yn)


def test_perturbation_scale_and_covariance():
    s = gaussian_perturbation()
    assert s.alpha(10) == 1024.0
    assert np.all(np.abs(s.g_covariance_zscores()) <= 3.0)


def test_perturbation_rejects_uncentred_noise():
    with pytest.raises(ValueError, match="centred"):
        PerturbationScheme(NormalLaw(), lambda y, r: y, lambda y, r: np.ones(y.shape + (1,)), NormalLaw(mean=0.05))


def test_scheme_from_config():
    g = scheme_from_config({"scheme": "graduation", "law": {"kind": "uniform"}, "d": 2})
    assert g.dimension == 2 and g.alpha(4) == 16.0
    p = scheme_from_config({"scheme": "perturbation", "law": {"kind": "normal"}, "z": ["x0"], "t": [["1"]],
                            "drift": ["-0.5 * x0"]})
    assert p.reference.drift(np.array([[2.0]]))[0, 0] == -1.0
    with pytest.raises(ValueError, match="unknown scheme"):
        scheme_from_config({"scheme": "coin"})


@pytest.mark.parametrize("make", [binary_digit_scheme, lambda: polya_scheme(500),
                                  lambda: graduation_scheme(NormalLaw()), gaussian_perturbation])
def test_same_stream_same_pairs(make):
    s = make()
    a = s.sample(6, 500, substream(9, "same"))
    b = s.sample(6, 500, substream(9, "same"))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.yn, b.yn)
