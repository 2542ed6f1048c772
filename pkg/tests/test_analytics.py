"""Unit tests for analytics.py."""

import math

import numpy as np
import pytest

from crossmf.analytics import (
    acf,
    excess_kurtosis,
    log_returns,
    qq_points,
    summarize_returns,
    volatility_clustering,
    white_noise_fraction,
)
from crossmf.errors import StatisticsError


class TestLogReturns:
    """Tests for log_returns."""

    def test_values(self):
        r = log_returns([1.0, math.e, 1.0])
        assert r == pytest.approx([1.0, -1.0])

    def test_nonpositive_price(self):
        with pytest.raises(StatisticsError, match="positive"):
            log_returns([1.0, 0.0, 2.0])

    def test_too_short(self):
        with pytest.raises(StatisticsError):
            log_returns([1.0])


class TestAcf:
    """Tests for the sample autocorrelation."""

    def test_alternating_series(self):
        x = np.where(np.arange(10_000) % 2 == 0, 1.0, -1.0)
        rho = acf(x, 2)
        assert rho[0] == 1.0
        assert rho[1] == pytest.approx(-0.9999, abs=1e-3)
        assert rho[2] == pytest.approx(0.9998, abs=1e-3)

    def test_iid_inside_band(self):
        x = np.random.default_rng(0).standard_normal(5000)
        assert white_noise_fraction(acf(x, 50), x.size) >= 0.8

    def test_lag_bounds(self):
        with pytest.raises(StatisticsError, match="max_lag"):
            acf([1.0, 2.0, 3.0], 3)
        with pytest.raises(StatisticsError, match="max_lag"):
            acf([1.0, 2.0, 3.0], 0)

    def test_zero_variance(self):
        with pytest.raises(StatisticsError, match="zero-variance"):
            acf(np.ones(20), 5)


class TestKurtosis:
    """Tests for excess kurtosis."""

    def test_two_point_law(self):
        x = np.where(np.arange(1000) % 2 == 0, 1.0, -1.0)
        assert excess_kurtosis(x) == pytest.approx(-2.0)

    def test_gaussian_near_zero(self):
        x = np.random.default_rng(1).standard_normal(1_000_000)
        assert abs(excess_kurtosis(x)) < 0.1

    def test_fat_tails_positive(self):
        x = np.random.default_rng(2).standard_t(3, 100_000)
        assert excess_kurtosis(x) > 1.0

    def test_too_short(self):
        with pytest.raises(StatisticsError):
            excess_kurtosis([1.0, 2.0, 3.0])


class TestQqPoints:
    """Tests for normal QQ-points."""

    def test_gaussian_quantiles_lie_on_diagonal(self):
        from scipy.stats import norm

        n = 200
        x = norm.ppf((np.arange(1, n + 1) - 0.5) / n)[::-1]
        points = qq_points(x, standardize=False)
        assert points.shape == (n, 2)
        assert np.allclose(points[:, 0], points[:, 1])

    def test_symmetric_positions(self):
        points = qq_points(np.random.default_rng(3).standard_normal(101))
        assert points[0, 0] == pytest.approx(-points[-1, 0])
        assert points[50, 0] == pytest.approx(0.0, abs=1e-12)

    def test_heavy_tails_beyond_gaussian(self):
        points = qq_points(np.random.default_rng(4).standard_t(2, 5000), standardize=False)
        assert points[-1, 1] > points[-1, 0]
        assert points[0, 1] < points[0, 0]

    def test_too_short(self):
        with pytest.raises(StatisticsError):
            qq_points(np.arange(5.0))


class TestVolatilityClustering:
    """Tests for the clustering score."""

    def test_iid_has_no_clustering(self):
        x = np.random.default_rng(5).standard_normal(20_000)
        assert volatility_clustering(x) < 0.05

    def test_volatility_regimes_cluster(self):
        gen = np.random.default_rng(6)
        scale = np.repeat(np.tile([0.1, 1.0], 20), 500)
        x = gen.standard_normal(scale.size) * scale
        assert volatility_clustering(x) > 0.1


class TestWhiteNoiseFraction:
    """Tests for white_noise_fraction."""

    def test_half_inside(self):
        assert white_noise_fraction(np.array([1.0, 0.0, 0.5]), 100) == 0.5


class TestSummarizeReturns:
    """Tests for summarize_returns."""

    def test_keys_and_sizes(self):
        gen = np.random.default_rng(7)
        prices = np.exp(np.cumsum(np.concatenate([[0.0], 0.01 * gen.standard_normal(1000)])))
        summary = summarize_returns(prices)
        assert summary["n_returns"] == 1000
        assert len(summary["acf_raw"]) == 51
        assert len(summary["acf_abs"]) == 51
        assert len(summary["qq_points"]) == 1000
        assert 0.0 <= summary["white_noise_fraction"] <= 1.0

    def test_short_series_caps_lag(self):
        summary = summarize_returns([1.0, 1.1, 0.9, 1.2, 1.0, 1.3, 0.8, 1.1, 1.0, 1.2, 0.9, 1.0])
        assert len(summary["acf_raw"]) == 11
