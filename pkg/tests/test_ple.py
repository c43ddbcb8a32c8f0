import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabspline.errors import EmptyInput, NonIncreasingKnots
from tabspline.ple import PleBoundaries, build_adaptive_ple, build_ple_boundaries, encode_ple, encode_ple_batch

import oracles


@st.composite
def boundaries(draw):
    T = draw(st.integers(1, 12))
    pts = draw(st.lists(st.floats(-5, 5), min_size=T + 1, max_size=T + 1, unique=True))
    b = np.sort(pts)
    if np.min(np.diff(b)) < 1e-6:
        b = np.linspace(b[0], b[0] + T, T + 1)
    return PleBoundaries(b)


def test_hand_values():
    b = PleBoundaries([0.0, 0.5, 1.0])
    np.testing.assert_allclose(encode_ple(0.25, b), [0.5, 0.0])
    np.testing.assert_allclose(encode_ple(0.75, b), [1.0, 0.5])
    np.testing.assert_allclose(encode_ple(0.0, b), [0.0, 0.0])
    np.testing.assert_allclose(encode_ple(1.0, b), [1.0, 1.0])


def test_clipping():
    b = PleBoundaries([0.0, 0.5, 1.0])
    np.testing.assert_array_equal(encode_ple(-3.0, b), encode_ple(0.0, b))
    np.testing.assert_array_equal(encode_ple(7.0, b), encode_ple(1.0, b))


def test_single_bin_is_minmax():
    b = PleBoundaries([2.0, 6.0])
    np.testing.assert_allclose(encode_ple_batch([2.0, 3.0, 6.0], b)[:, 0], [0.0, 0.25, 1.0])


def test_invalid_boundaries():
    with pytest.raises(NonIncreasingKnots):
        PleBoundaries([0.0, 0.5, 0.5, 1.0])
    with pytest.raises(ValueError):
        PleBoundaries([0.0])


def test_matches_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        T = int(rng.integers(1, 10))
        b = np.sort(rng.uniform(-1, 2, T + 1))
        xs = np.concatenate([rng.uniform(-1.5, 2.5, 5), b])
        got = encode_ple_batch(xs, PleBoundaries(b))
        want = np.array([oracles.ple_row(x, b) for x in xs])
        np.testing.assert_allclose(got, want, atol=1e-15)


def test_uniform_mode():
    b = build_ple_boundaries(np.linspace(0, 1, 10), T=2, mode="uniform")
    np.testing.assert_allclose(b.bounds, [0.0, 0.5, 1.0])


def test_quantile_mode():
    b = build_ple_boundaries(np.linspace(0, 1, 101), T=4, mode="quantile")
    np.testing.assert_allclose(b.bounds, [0.0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)


def test_cart_mode_finds_step():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=400)
    y = (x > 0.62).astype(float)
    b = build_ple_boundaries(x, y, T=2, mode="cart")
    assert b.bounds[1] == pytest.approx(0.62, abs=0.01)
    assert b.bounds[0] == x.min() and b.bounds[-1] == x.max()


def test_degenerate_feature_falls_back():
    b = build_ple_boundaries(np.full(10, 0.4), np.arange(10.0), T=3)
    assert b.fallback
    np.testing.assert_allclose(b.bounds, np.linspace(0, 1, 4))


def test_errors():
    with pytest.raises(EmptyInput):
        build_ple_boundaries([], T=3, mode="uniform")
    with pytest.raises(ValueError):
        build_ple_boundaries([0.1, 0.2], T=3, mode="bogus")
    with pytest.raises(ValueError):
        build_ple_boundaries([0.1, 0.2], None, T=3, mode="cart")


def test_adaptive_bin_count_is_clamped():
    rng = np.random.default_rng(3)
    x = rng.uniform(size=2000)
    assert build_adaptive_ple(x, np.zeros(2000)).T == 5
    assert build_adaptive_ple(x, (x > 0.5) * 1.0).T == 5
    many = build_adaptive_ple(x, np.sin(40 * x) + 0.05 * rng.normal(size=2000))
    assert 5 < many.T <= 50


def test_adaptive_uses_number_of_thresholds():
    from tabspline.trees import extract_splits, fit_cart

    rng = np.random.default_rng(4)
    x = rng.uniform(size=3000)
    y = np.floor(x * 12) + 0.01 * rng.normal(size=3000)
    n_thr = len({r.threshold for r in extract_splits(fit_cart(x, y, min_samples_leaf=25))})
    assert build_adaptive_ple(x, y).T == min(max(n_thr + 1, 5), 50)


@settings(max_examples=200, deadline=None)
@given(b=boundaries(), u=st.floats(-0.2, 1.2))
def test_cumulative_structure(b, u):
    lo, hi = b.bounds[0], b.bounds[-1]
    x = lo + u * (hi - lo)
    e = encode_ple(x, b)
    assert np.all((e >= 0) & (e <= 1))
    interior = (e > 0) & (e < 1)
    assert interior.sum() <= 1
    # prefix ones, at most one fraction, suffix zeros
    assert np.all(np.diff(e) <= 0)
    xc = min(max(x, lo), hi)
    np.testing.assert_allclose(lo + np.sum(e * np.diff(b.bounds)), xc, atol=1e-12 * max(1.0, abs(xc)))


@settings(max_examples=50, deadline=None)
@given(xs=st.lists(st.floats(0, 1), min_size=2, max_size=60), T=st.integers(1, 10),
       mode=st.sampled_from(["uniform", "quantile", "cart"]), seed=st.integers(0, 99))
def test_built_boundaries_valid(xs, T, mode, seed):
    x = np.array(xs)
    y = np.random.default_rng(seed).normal(size=x.size)
    b = build_ple_boundaries(x, y, T=T, mode=mode)
    assert b.T == T
    assert np.all(np.diff(b.bounds) > 0)
    if not b.fallback:
        assert b.bounds[0] == x.min() and b.bounds[-1] == x.max()
