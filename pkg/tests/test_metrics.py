import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lfi_forge.metrics import (BandwidthDegenerateError, WeightedPopulation, emd, histogram, log_mean_emd,
                               mmd2, mse)
from lfi_forge.oracles import random_transport_instance, transport_lp


def test_population_normalizes_and_validates():
    p = WeightedPopulation([[0.0], [1.0]], [1.0, 3.0])
    np.testing.assert_allclose(p.weights, [0.25, 0.75])
    with pytest.raises(ValueError):
        WeightedPopulation([[0.0]], [-1.0])
    with pytest.raises(ValueError):
        WeightedPopulation([[0.0], [1.0]], [0.0, 0.0])
    with pytest.raises(ValueError):
        WeightedPopulation([[0.0], [1.0]], [1.0])


def test_emd_point_masses():
    a = WeightedPopulation.uniform([[0.0, 0.0]])
    b = WeightedPopulation.uniform([[3.0, 4.0]])
    assert emd(a, b, bins=None) == pytest.approx(5.0)


def test_emd_identical_is_zero():
    pts = np.random.default_rng(0).normal(size=(50, 2))
    a = WeightedPopulation.uniform(pts)
    assert emd(a, a, bins=None) == pytest.approx(0.0, abs=1e-12)
    assert emd(a, a) == pytest.approx(0.0, abs=1e-12)


def test_emd_three_vs_two_atoms_lp():
    xa = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    wa = np.array([0.2, 0.5, 0.3])
    xb = np.array([[1.0, 1.0], [-1.0, 0.5]])
    wb = np.array([0.6, 0.4])
    fast = emd(WeightedPopulation(xa, wa), WeightedPopulation(xb, wb), bins=None)
    assert abs(fast - transport_lp(xa, wa, xb, wb)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_emd_matches_lp(seed):
    xa, wa, xb, wb = random_transport_instance(np.random.default_rng(seed))
    fast = emd(WeightedPopulation(xa, wa), WeightedPopulation(xb, wb), bins=None)
    assert abs(fast - transport_lp(xa, wa, xb, wb)) < 1e-9


def test_emd_symmetric_and_translation():
    rng = np.random.default_rng(1)
    a = WeightedPopulation(rng.normal(size=(30, 2)), rng.random(30))
    b = WeightedPopulation(rng.normal(size=(20, 2)) + 1, rng.random(20))
    assert emd(a, b) == pytest.approx(emd(b, a), abs=1e-12)
    # 1-D shift of identical samples moves the whole mass by the shift
    x = rng.normal(size=(200, 1))
    assert emd(WeightedPopulation.uniform(x), WeightedPopulation.uniform(x + 0.5), bins=None) == pytest.approx(0.5)


def test_emd_histogram_close_to_exact():
    rng = np.random.default_rng(2)
    a = WeightedPopulation.uniform(rng.normal(size=(400, 2)))
    b = WeightedPopulation.uniform(rng.normal(size=(400, 2)) + [1.0, 0.0])
    exact = emd(a, b, bins=None)
    binned = emd(a, b, bins=32)
    # histogram cells are about 0.25 wide; binning error is of that order
    assert abs(binned - exact) < 0.15


def test_emd_dimension_mismatch():
    with pytest.raises(ValueError):
        emd(WeightedPopulation.uniform(np.zeros((2, 1))), WeightedPopulation.uniform(np.zeros((2, 2))))


def test_histogram_mass():
    pop = WeightedPopulation.uniform(np.random.default_rng(3).random((1000, 2)))
    centres, mass = histogram(pop, [0, 0], [1, 1], 4)
    assert mass.sum() == pytest.approx(1.0)
    assert centres.shape[1] == 2
    assert np.all((centres > 0) & (centres < 1))


def test_mmd_identical_is_zero_and_positive_otherwise():
    rng = np.random.default_rng(4)
    a = rng.normal(size=(200, 2))
    assert mmd2(a, a) == pytest.approx(0.0, abs=1e-12)
    assert mmd2(a, rng.normal(size=(200, 2)) + 2.0) > 0.1


def test_mmd_small_case_by_hand():
    a = np.array([[0.0]])
    b = np.array([[1.0]])
    # median pairwise distance of {0, 1} is 1, so gamma = 1/2
    assert mmd2(a, b) == pytest.approx(2 - 2 * math.exp(-0.5))


def test_mmd_degenerate_bandwidth():
    with pytest.raises(BandwidthDegenerateError):
        mmd2(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        mmd2(np.zeros((0, 2)), np.zeros((4, 2)))


def test_mse_examples():
    assert mse(WeightedPopulation.uniform([[0.0], [2.0]]), [1.0]) == pytest.approx(1.0)
    p = WeightedPopulation([[1.0, 1.0], [3.0, 3.0]], [0.5, 0.5])
    # bias^2 + variance per dimension: 1 + 1
    assert mse(p, [1.0, 1.0]) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        mse(p, [1.0])


def test_log_mean_emd():
    assert log_mean_emd([1.0, 3.0]) == pytest.approx(math.log(2.0))
    with pytest.raises(ValueError):
        log_mean_emd([])


def test_population_csv():
    p = WeightedPopulation([[0.1, 0.2]], [1.0])
    assert p.to_csv().splitlines() == ["theta0,theta1,weight", "0.10000000000000001,0.20000000000000001,1"]
