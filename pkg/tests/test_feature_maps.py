import math

import numpy as np
import pytest

from carlab.errors import InvalidInput
from carlab.feature_maps import (
    DiscreteScheme,
    FeatureMap,
    apply_map,
    margin_imbalances,
)


def test_identity_passthrough():
    m = FeatureMap.identity(3)
    out = apply_map(m, [1.5, -2.0, 0.0])
    assert np.array_equal(out, np.array([1.5, -2.0, 0.0]))
    assert m.dim_out == 3


def test_scaled_identity_affine():
    m = FeatureMap.scaled_identity(scale=[2.0, 0.5], offset=[1.0, 0.0])
    out = apply_map(m, [3.0, 4.0])
    assert np.array_equal(out, np.array([7.0, 2.0]))


def test_polynomial_moments_blocks():
    m = FeatureMap.polynomial_moments(dim=2, degree=3)
    out = apply_map(m, [2.0, -1.0])
    assert np.array_equal(out, np.array([2.0, -1.0, 4.0, 1.0, 8.0, -1.0]))
    assert m.dim_out == 6


class TestStratified:
    def test_one_hot_position_lexicographic(self):
        scheme = DiscreteScheme.make(levels=[2, 2])
        m = FeatureMap.stratified(scheme)
        # (k1, k2) ranked (1,1) (1,2) (2,1) (2,2)
        assert np.array_equal(apply_map(m, [2, 1]), np.array([0.0, 0.0, 1.0, 0.0]))
        assert np.array_equal(apply_map(m, [1, 2]), np.array([0.0, 1.0, 0.0, 0.0]))
        assert m.dim_out == 4

    def test_stratum_index_covers_all_cells(self):
        scheme = DiscreteScheme.make(levels=[2, 3])
        seen = {scheme.stratum_index([k1, k2]) for k1 in (1, 2) for k2 in (1, 2, 3)}
        assert seen == set(range(6))


class TestPocockSimon:
    def test_frozen_example(self):
        scheme = DiscreteScheme.make(levels=[2, 3], weights=[1, 2])
        m = FeatureMap.pocock_simon(scheme)
        out = apply_map(m, [2, 1])
        expected = np.array([0.0, 1.0, math.sqrt(2.0), 0.0, 0.0])
        assert np.allclose(out, expected, atol=1e-15)
        assert m.dim_out == 5

    def test_rejects_out_of_range_level(self):
        scheme = DiscreteScheme.make(levels=[2, 3])
        m = FeatureMap.pocock_simon(scheme)
        with pytest.raises(InvalidInput):
            apply_map(m, [3, 1])
        with pytest.raises(InvalidInput):
            apply_map(m, [0, 1])

    def test_rejects_non_integer_level(self):
        scheme = DiscreteScheme.make(levels=[2, 3])
        m = FeatureMap.pocock_simon(scheme)
        with pytest.raises(InvalidInput):
            apply_map(m, [1.5, 1])


class TestHuHu:
    def test_layout_and_weights(self):
        scheme = DiscreteScheme.make(levels=[2, 2], weights=[1.0, 4.0])
        m = FeatureMap.hu_hu(scheme, overall_weight=9.0, stratum_weight=16.0)
        out = apply_map(m, [1, 2])
        assert m.dim_out == 1 + 4 + 4
        assert out[0] == 3.0  # sqrt of overall weight
        assert np.allclose(out[1:5], [1.0, 0.0, 0.0, 2.0])
        assert np.allclose(out[5:], [0.0, 4.0, 0.0, 0.0])

    def test_reduces_to_margin_map_when_other_weights_vanish(self):
        scheme = DiscreteScheme.make(levels=[2, 3], weights=[1, 2])
        hh = FeatureMap.hu_hu(scheme, overall_weight=0.0, stratum_weight=0.0)
        ps = FeatureMap.pocock_simon(scheme)
        out = apply_map(hh, [2, 3])
        assert out[0] == 0.0
        assert np.array_equal(out[1:6], apply_map(ps, [2, 3]))
        assert np.all(out[6:] == 0.0)


class TestMarginImbalances:
    def test_equal_allocation_reports_integer_diff(self):
        scheme = DiscreteScheme.make(levels=[2, 2])
        rows = [[1, 1], [1, 1], [1, 1]]
        rep = margin_imbalances(rows, [1, 1, 0], scheme, rho=0.5)
        assert rep.integer is not None
        assert rep.integer[0][0] == 1  # two treated, one control
        assert rep.integer[1][0] == 1
        assert rep.weighted[0][0] == pytest.approx(0.5)

    def test_unequal_allocation_reports_weighted_only(self):
        scheme = DiscreteScheme.make(levels=[2, 2])
        rows = [[1, 1], [1, 1], [1, 1]]
        rep = margin_imbalances(rows, [1, 1, 0], scheme, rho=2.0 / 3.0)
        assert rep.integer is None
        # (1 - 2/3) + (1 - 2/3) + (0 - 2/3) = 0
        assert rep.weighted[0][0] == pytest.approx(0.0, abs=1e-15)

    def test_cells_accumulate_independently(self):
        scheme = DiscreteScheme.make(levels=[2, 3])
        rows = [[1, 2], [2, 2], [1, 3]]
        rep = margin_imbalances(rows, [1, 0, 1], scheme, rho=0.5)
        assert rep.integer[0].tolist() == [2, -1]
        assert rep.integer[1].tolist() == [0, 0, 1]


def test_scheme_validation():
    with pytest.raises(InvalidInput):
        DiscreteScheme.make(levels=[1, 3])
    with pytest.raises(InvalidInput):
        DiscreteScheme.make(levels=[2, 3], weights=[1])
    with pytest.raises(InvalidInput):
        DiscreteScheme.make(levels=[2, 3], weights=[1, -2])
