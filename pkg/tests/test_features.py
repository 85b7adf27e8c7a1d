"""Menu encodings, covariates, and binning."""

import numpy as np
import pytest
from hypothesis import given, settings

from rulegate.errors import EmptyDatasetError
from rulegate.features import (
    GATE_FEATURE_NAMES,
    decile_bins,
    decode_raw,
    feature_matrix,
    gate_features,
    menu_covariates,
    raw_encoding,
    rescale_factor,
)
from rulegate.lotteries import Menu, canonicalize, degenerate

from .conftest import menu_strategy, random_menu_np


def menu(left_out, left_p, right_out, right_p, ident="m"):
    return Menu(
        id=ident,
        left=canonicalize(left_out, left_p),
        right=canonicalize(right_out, right_p),
    )


class TestRescaleFactor:
    def test_max_abs(self):
        menus = [menu([-50, 100], [0.5, 0.5], [3], [1.0])]
        assert rescale_factor(menus) == 100.0

    def test_zero_guard(self):
        assert rescale_factor([menu([0], [1.0], [0], [1.0])]) == 1.0

    def test_empty(self):
        with pytest.raises(EmptyDatasetError):
            rescale_factor([])


class TestGateFeatures:
    def test_symmetric_menu_zero_gaps(self):
        m = menu([0, 10], [0.4, 0.6], [0, 10], [0.4, 0.6])
        z = gate_features(m)
        np.testing.assert_allclose(z[:6], 0.0, atol=1e-12)
        assert z[6] == z[7] and z[8] == z[9]

    def test_degenerate_menu_values(self):
        z = gate_features(menu([2], [1.0], [1], [1.0]), factor=1.0)
        expected = dict(zip(GATE_FEATURE_NAMES, z))
        assert expected["ev_gap"] == 1.0
        assert expected["max_gap"] == 1.0
        assert expected["min_gap"] == 1.0
        assert expected["var_gap"] == 0.0
        assert expected["mode_gap"] == 1.0
        assert expected["skew_gap"] == 0.0
        assert expected["max_abs_payoff"] == 2.0
        assert expected["support_gap"] == 0.0

    def test_ev_gap_is_level_difference(self):
        m = menu([0, 8], [0.25, 0.75], [1, 5], [0.5, 0.5])
        z = gate_features(m, factor=2.0)
        assert z[0] == pytest.approx(z[6] - z[7], abs=1e-12)

    @given(menu_strategy())
    @settings(max_examples=100)
    def test_swap_negates_gaps(self, m):
        swapped = Menu(id="s", left=m.right, right=m.left)
        z = gate_features(m, factor=3.0)
        zs = gate_features(swapped, factor=3.0)
        np.testing.assert_allclose(zs[:6], -z[:6], atol=1e-12)
        np.testing.assert_allclose(zs[[7, 6, 9, 8]], z[[6, 7, 8, 9]], atol=1e-12)
        assert zs[10] == z[10]
        assert zs[11] == -z[11]

    def test_rescaling_divides_outcome_moments(self):
        m = menu([0, 10], [0.5, 0.5], [2], [1.0])
        z1 = gate_features(m, factor=1.0)
        z10 = gate_features(m, factor=10.0)
        assert z10[0] == pytest.approx(z1[0] / 10)
        assert z10[3] == pytest.approx(z1[3] / 100)  # variance gap scales squared


class TestRawEncoding:
    def test_degenerate_layout(self):
        enc = raw_encoding(menu([1], [1.0], [1], [1.0]), factor=1.0)
        assert enc.shape == (40,)
        assert enc[0] == 1.0 and enc[10] == 1.0
        assert np.count_nonzero(enc[:10]) == 1

    def test_two_point_padding(self):
        enc = raw_encoding(menu([3, 5], [0.5, 0.5], [1], [1.0]))
        assert np.count_nonzero(enc[10:20]) == 2  # two probability slots
        np.testing.assert_array_equal(enc[2:10], 0.0)

    @given(menu_strategy())
    @settings(max_examples=60)
    def test_length_and_round_trip(self, m):
        factor = 7.0
        enc = raw_encoding(m, factor)
        assert enc.shape == (40,)
        back = decode_raw(enc, factor)
        np.testing.assert_allclose(back.left.outcomes, m.left.outcomes, atol=1e-9)
        np.testing.assert_allclose(back.left.probs, m.left.probs, atol=1e-12)
        np.testing.assert_allclose(back.right.outcomes, m.right.outcomes, atol=1e-9)

    def test_truncation_keeps_smallest(self):
        outs = list(range(12))
        probs = [1 / 12] * 12
        enc = raw_encoding(menu(outs, probs, [0], [1.0]))
        np.testing.assert_array_equal(enc[:10], np.arange(10.0))


class TestMenuCovariates:
    def test_identical_lotteries(self):
        m = menu([0, 5], [0.5, 0.5], [0, 5], [0.5, 0.5])
        cov = menu_covariates(m)
        assert cov.tc == 0.0 and cov.risk_asym == 0.0

    def test_pure_value_gap_has_zero_complexity(self):
        cov = menu_covariates(menu([1], [1.0], [0], [1.0]))
        assert cov.tc == pytest.approx(0.0, abs=1e-12)

    def test_crossing_menu(self):
        # CDF distance 1, EV gap 0 -> tc = log 2
        m = menu([0, 2], [0.5, 0.5], [1], [1.0])
        cov = menu_covariates(m)
        assert cov.tc == pytest.approx(np.log(2.0))
        assert cov.risk_asym == pytest.approx(1.0)

    @given(menu_strategy())
    @settings(max_examples=150)
    def test_excess_dissimilarity_nonnegative(self, m):
        cov = menu_covariates(m)
        assert cov.tc >= 0.0
        assert cov.risk_asym >= 0.0


class TestDecileBins:
    def test_even_fill(self):
        values = np.arange(100.0)
        out = decile_bins(values, 10)
        assert out.n_bins == 10 and not out.degenerate
        counts = np.bincount(out.bins)
        np.testing.assert_array_equal(counts, 10)

    def test_constant_vector_degenerates(self):
        out = decile_bins(np.ones(30), 10)
        assert out.n_bins == 1 and out.degenerate
        assert np.all(out.bins == 0)

    def test_monotone_in_value(self, rng):
        values = rng.normal(size=500)
        out = decile_bins(values, 10)
        order = np.argsort(values)
        assert np.all(np.diff(out.bins[order]) >= 0)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            decile_bins([1.0, 2.0], 1)
        with pytest.raises(ValueError):
            decile_bins([1.0, np.nan], 5)


def test_feature_matrix_shape(rng):
    menus = [random_menu_np(rng, ident=f"fm{t}") for t in range(7)]
    z = feature_matrix(menus, 5.0)
    assert z.shape == (7, 12)


def test_feature_override_wins():
    m = Menu(
        id="o",
        left=degenerate(1),
        right=degenerate(0),
        feature_override=np.arange(3.0),
    )
    np.testing.assert_array_equal(gate_features(m, 9.0), [0.0, 1.0, 2.0])
