"""Return statistics: fat tails, return autocorrelation and volatility clustering."""

from collections.abc import Sequence
from typing import Any

import numpy as np
from scipy import stats

from crossmf.errors import StatisticsError

DEFAULT_MAX_LAG = 50


def _as_series(series: Sequence[float] | np.ndarray, min_len: int) -> np.ndarray:
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1 or x.size < min_len:
        raise StatisticsError(f"series needs at least {min_len} values, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise StatisticsError("series contains non-finite values")
    return x


def log_returns(prices: Sequence[float] | np.ndarray) -> np.ndarray:
    """r_k = log S_k - log S_(k-1)."""
    s = _as_series(prices, 2)
    if np.any(s <= 0):
        raise StatisticsError(f"log-returns need positive prices, min is {s.min()!r}")
    return np.diff(np.log(s))


def acf(series: Sequence[float] | np.ndarray, max_lag: int = DEFAULT_MAX_LAG) -> np.ndarray:
    """Sample autocorrelation rho(0..max_lag) with the full-sample mean; rho(0) = 1."""
    x = _as_series(series, 2)
    if not 1 <= max_lag < x.size:
        raise StatisticsError(f"max_lag must satisfy 1 <= max_lag < n (max_lag={max_lag}, n={x.size})")
    dev = x - x.mean()
    denom = float(np.dot(dev, dev))
    if denom == 0.0:
        raise StatisticsError("autocorrelation of a zero-variance series is undefined")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for lag in range(1, max_lag + 1):
        out[lag] = float(np.dot(dev[:-lag], dev[lag:])) / denom
    return out


def excess_kurtosis(series: Sequence[float] | np.ndarray) -> float:
    """m4 / m2^2 - 3 from biased sample central moments."""
    x = _as_series(series, 4)
    if np.var(x) == 0.0:
        raise StatisticsError("kurtosis of a zero-variance series is undefined")
    return float(stats.kurtosis(x, fisher=True, bias=True))


def qq_points(series: Sequence[float] | np.ndarray, standardize: bool = True) -> np.ndarray:
    """(Gaussian quantile, sample quantile) pairs at plotting positions (k - 0.5)/n.

    Returns an (n, 2) array. With standardize the sorted values are z-scores.
    """
    x = _as_series(series, 10)
    sd = float(np.std(x))
    if sd == 0.0:
        raise StatisticsError("qq-points of a zero-variance series are undefined")
    n = x.size
    theoretical = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    sample = np.sort(x)
    if standardize:
        sample = (sample - x.mean()) / sd
    return np.column_stack([theoretical, sample])


def volatility_clustering(series: Sequence[float] | np.ndarray, max_lag: int = DEFAULT_MAX_LAG) -> float:
    """Mean autocorrelation of absolute returns over lags 1..max_lag."""
    rho = acf(np.abs(np.asarray(series, dtype=np.float64)), max_lag)
    return float(rho[1:].mean())


def white_noise_fraction(rho: np.ndarray, n: int) -> float:
    """Share of lags >= 1 with |rho| inside the 2/sqrt(n) band."""
    band = 2.0 / np.sqrt(n)
    return float(np.mean(np.abs(rho[1:]) <= band))


def summarize_returns(prices: Sequence[float] | np.ndarray, max_lag: int = DEFAULT_MAX_LAG) -> dict[str, Any]:
    """Statistics written by the analyze command."""
    r = log_returns(prices)
    lag = min(max_lag, r.size - 1)
    raw = acf(r, lag)
    absolute = acf(np.abs(r), lag)
    return {
        "n_returns": int(r.size),
        "excess_kurtosis": excess_kurtosis(r),
        "acf_raw": raw.tolist(),
        "acf_abs": absolute.tolist(),
        "volatility_clustering": float(absolute[1:].mean()),
        "white_noise_fraction": white_noise_fraction(raw, r.size),
        "qq_points": qq_points(r).tolist(),
    }
