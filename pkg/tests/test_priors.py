import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lfi_forge.priors import (BinGrid, BoxPrior, CategoricalProposal, DegenerateSupportError, DeltaSchedule,
                              OutOfSupportError, discretize, fit_edges, fit_grid, lv_prior, ma2_prior,
                              sample_from_proposal, sample_prior, threshold_exploit)

weight_vectors = st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=2, max_size=25).filter(
    lambda w: sum(w) > 1e-6).map(lambda w: np.asarray(w) / np.sum(w))


def test_prior_boxes():
    p = ma2_prior()
    np.testing.assert_array_equal(p.lo, [-2, -1])
    np.testing.assert_array_equal(p.hi, [2, 1])
    lv = lv_prior()
    np.testing.assert_allclose(lv.lo, [math.log(0.002)] * 3)
    np.testing.assert_allclose(lv.hi, [math.log(2)] * 3)
    with pytest.raises(ValueError):
        BoxPrior([0.0], [0.0])


def test_sample_prior_in_box():
    p = lv_prior()
    s = sample_prior(p, 1000, np.random.default_rng(0))
    assert s.shape == (1000, 3)
    assert np.all(p.contains(s))


def test_fit_edges():
    e = fit_edges([0.0, 1.0, 3.0, 4.0], 4)
    np.testing.assert_allclose(e, [0, 1, 2, 3, 4])
    with pytest.raises(DegenerateSupportError):
        fit_edges([2.0, 2.0], 4)


def test_discretize_worked_examples():
    g = BinGrid(dims=(0, 1), edges=([0, 1, 2], [0, 1, 2]))
    assert discretize([0.5, 0.5], g) == 0
    assert discretize([0.5, 1.5], g) == 1
    assert discretize([1.5, 0.5], g) == 2
    # left-closed bins, last bin closed on the right
    assert discretize([1.0, 0.0], g) == 2
    assert discretize([2.0, 2.0], g) == 3
    with pytest.raises(OutOfSupportError):
        discretize([2.1, 0.0], g)


def test_discretize_uses_selected_dims():
    g = BinGrid(dims=(1, 2), edges=([0, 1, 2], [0, 1, 2]))
    assert discretize([99.0, 0.5, 1.5], g) == 1


def test_threshold_examples():
    np.testing.assert_allclose(threshold_exploit([0.5, 0.3, 0.16, 0.04], 0.05),
                               np.array([0.5, 0.3, 0.16, 0.0]) / 0.96)
    np.testing.assert_array_equal(threshold_exploit([0.02, 0.03, 0.01], 0.05), [0, 1, 0])
    np.testing.assert_array_equal(threshold_exploit([0.25] * 4, 0.25), [0.25] * 4)
    with pytest.raises(ValueError):
        threshold_exploit([0.5, 0.5], 1.0)


@settings(max_examples=200, deadline=None)
@given(weight_vectors, st.floats(0.0, 0.99))
def test_threshold_is_distribution(w, delta):
    out = threshold_exploit(w, delta)
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) < 1e-12
    # survivors keep their relative proportions
    nz = out > 0
    if nz.sum() > 1 and np.all(w[nz] >= delta):
        np.testing.assert_allclose(out[nz] / out[nz].sum(), w[nz] / w[nz].sum(), rtol=1e-10)
    assert np.argmax(out) == np.argmax(w) or out[np.argmax(w)] == out.max()


@settings(max_examples=100, deadline=None)
@given(weight_vectors)
def test_threshold_zero_is_identity(w):
    np.testing.assert_allclose(threshold_exploit(w, 0.0), w / w.sum(), rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(weight_vectors, st.floats(0.0, 0.99))
def test_threshold_iteration_terminates(w, delta):
    cur = threshold_exploit(w, delta)
    for _ in range(w.size):
        nxt = threshold_exploit(cur, delta)
        if (nxt > 0).sum() == (cur > 0).sum():
            np.testing.assert_allclose(nxt, cur, rtol=1e-12)
            return
        assert (nxt > 0).sum() < (cur > 0).sum()
        cur = nxt
    raise AssertionError("no fixed point within B^2 applications")


def test_delta_schedule():
    assert DeltaSchedule().value(5) == 0.05
    d = DeltaSchedule(kind="exponential", base=0.1, decay=math.log(2))
    assert d.value(1) == pytest.approx(0.1)
    assert d.value(3) == pytest.approx(0.025)
    with pytest.raises(ValueError):
        DeltaSchedule(kind="linear")


def _pair_proposal(weights):
    g = BinGrid(dims=(0, 1), edges=(np.linspace(-2, 2, 5), np.linspace(-1, 1, 5)))
    return CategoricalProposal(g, weights)


def test_proposal_validation():
    with pytest.raises(ValueError):
        _pair_proposal(np.full(16, 0.1))
    with pytest.raises(ValueError):
        _pair_proposal(np.full(15, 1 / 15))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 15), st.integers(0, 2**31))
def test_discretize_sample_round_trip(cls, seed):
    w = np.zeros(16)
    w[cls] = 1.0
    prop = _pair_proposal(w)
    theta = sample_from_proposal(prop, 200, np.random.default_rng(seed))
    assert np.all(discretize(theta, prop.grid) == cls)


def test_round_trip_every_class_random_weights():
    rng = np.random.default_rng(1)
    w = rng.dirichlet(np.ones(16))
    prop = _pair_proposal(w)
    theta = sample_from_proposal(prop, 20_000, rng)
    cls = discretize(theta, prop.grid)
    assert set(np.unique(cls)) <= set(np.flatnonzero(w > 0))


def test_sample_uniform_1d_mean():
    g = BinGrid(dims=(0,), edges=(np.linspace(-2, 2, 5),))
    prop = CategoricalProposal(g, np.full(4, 0.25))
    x = sample_from_proposal(prop, 100_000, np.random.default_rng(0))[:, 0]
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean()) < 3 * se


def test_sample_binomial_proportion():
    g = BinGrid(dims=(0,), edges=([0.0, 1.0, 2.0],))
    prop = CategoricalProposal(g, [0.75, 0.25])
    n = 100_000
    x = sample_from_proposal(prop, n, np.random.default_rng(2))[:, 0]
    p = np.mean(x < 1.0)
    assert abs(p - 0.75) < 3 * math.sqrt(0.75 * 0.25 / n)


def test_sample_class_frequencies_chi_square():
    rng = np.random.default_rng(3)
    w = rng.dirichlet(np.ones(16))
    prop = _pair_proposal(w)
    n = 100_000
    counts = np.bincount(discretize(sample_from_proposal(prop, n, rng), prop.grid), minlength=16)
    assert stats.chisquare(counts, n * w).pvalue > 0.001


def test_proposal_marginals_and_json():
    w = np.arange(16, dtype=float)
    w /= w.sum()
    prop = _pair_proposal(w)
    W = w.reshape(4, 4)
    np.testing.assert_allclose(prop.marginal(0), W.sum(axis=1))
    np.testing.assert_allclose(prop.marginal(1), W.sum(axis=0))
    d = prop.to_dict()
    assert set(d) == {"dims", "edges_i", "edges_j", "weights"}
    back = CategoricalProposal.from_dict(d)
    np.testing.assert_array_equal(back.weights, prop.weights)
    np.testing.assert_array_equal(back.grid.edges[1], prop.grid.edges[1])


def test_fit_grid_pair():
    s = np.random.default_rng(0).random((50, 3))
    g = fit_grid(s, (0, 2), 4)
    assert g.dims == (0, 2)
    assert g.n_classes == 16
    assert g.edges[1][0] == s[:, 2].min() and g.edges[1][-1] == s[:, 2].max()
