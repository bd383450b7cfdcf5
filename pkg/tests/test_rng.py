import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errorcalc.rng import Moments, block_sizes, check_seed, run_blocks, substream, tree_reduce


def test_substream_reproducible_and_distinct():
    a = substream(42, "scheme", 3).random(5)
    assert np.array_equal(a, substream(42, "scheme", 3).random(5))
    assert not np.array_equal(a, substream(42, "scheme", 4).random(5))
    assert not np.array_equal(a, substream(43, "scheme", 3).random(5))


def test_seed_range():
    assert check_seed(2**64 - 1) == 2**64 - 1
    for bad in (-1, 2**64):
        with pytest.raises(ValueError):
            check_seed(bad)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=200), st.integers(1, 199))
def test_merge_matches_numpy(xs, cut):
    x = np.array(xs)
    cut = min(cut, len(x) - 1)
    m = Moments.of(x[:cut]).merge(Moments.of(x[cut:]))
    assert m.count == len(x)
    np.testing.assert_allclose(m.mean, [x.mean()], rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(m.variance, [x.var(ddof=1)], rtol=1e-9, atol=1e-6)


def test_tree_reduce_of_blocks():
    x = substream(0, "tree").normal(size=(1000, 2))
    parts = [Moments.of(x[i : i + 137]) for i in range(0, 1000, 137)]
    m = tree_reduce(parts)
    np.testing.assert_allclose(m.mean, x.mean(axis=0), rtol=1e-13)
    np.testing.assert_allclose(m.variance, x.var(axis=0, ddof=1), rtol=1e-12)
    with pytest.raises(ValueError):
        tree_reduce([])


def test_non_finite_rejected():
    with pytest.raises(FloatingPointError):
        Moments.of(np.array([1.0, np.inf]))


def test_block_sizes():
    assert block_sizes(10, 4) == [4, 4, 2]
    assert block_sizes(8, 4) == [4, 4]


def test_run_blocks_worker_invariant():
    def fn(rng, k):
        return rng.normal(size=k) ** 2

    one = run_blocks(fn, 10_000, 5, ("t",), block=1000)
    many = run_blocks(fn, 10_000, 5, ("t",), block=1000, workers=3)
    assert one.count == 10_000
    assert np.array_equal(one.mean, many.mean) and np.array_equal(one.m2, many.m2)
    with pytest.raises(ValueError):
        run_blocks(fn, 0, 5, ("t",))
