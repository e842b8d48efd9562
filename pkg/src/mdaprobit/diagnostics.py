"""Convergence and comparison summaries for retained draws."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

QQ_PROBABILITIES = np.linspace(0.005, 0.995, 199)
SUMMARY_QUANTILES = (2.5, 25.0, 50.0, 75.0, 97.5)


class DegenerateSeriesError(ValueError):
    """A series with zero variance has no autocorrelation."""


@dataclass(frozen=True)
class ScalarSeries:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).reshape(-1)
        if values.size < 2:
            raise ValueError(f"series {self.label!r} needs at least 2 values")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"series {self.label!r} has non-finite values")
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size


def _values(series) -> np.ndarray:
    if isinstance(series, ScalarSeries):
        return series.values
    return ScalarSeries(series).values


class EssReport(NamedTuple):
    ess: float
    ess_per_second: Optional[float]
    lag_cutoff: int


def _autocovariance(x: np.ndarray) -> np.ndarray:
    # biased (divide-by-T) estimator via zero-padded FFT
    T = x.size
    xc = x - x.mean()
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(xc, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:T] / T
    return acov


def autocorrelation(series, max_lag: Optional[int] = None) -> np.ndarray:
    """Sample autocorrelations at lags ``0..max_lag`` (all lags when omitted)."""
    x = _values(series)
    T = x.size
    max_lag = T - 1 if max_lag is None else int(max_lag)
    if not 0 <= max_lag < T:
        raise ValueError(f"max_lag must lie in [0, {T}), got {max_lag}")
    acov = _autocovariance(x)
    if not acov[0] > 1e-300 or np.ptp(x) == 0:
        raise DegenerateSeriesError("series has zero variance")
    rho = acov[: max_lag + 1] / acov[0]
    rho[0] = 1.0
    return rho


def geyer_truncation(rho: np.ndarray):
    """Initial positive sequence: returns ``(tau, last_lag)`` with
    ``tau = 1 + 2 * sum_{t=1}^{last_lag} rho_t``.

    Pairs ``rho_{2m} + rho_{2m+1}`` are accumulated while they stay positive.
    """
    tau = -1.0
    last = 0
    for m in range(rho.size // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        tau += 2.0 * pair
        last = 2 * m + 1
    return tau, last


def effective_sample_size(series, seconds: Optional[float] = None) -> EssReport:
    """``T / (1 + 2 sum rho_t)`` truncated by Geyer's initial positive sequence.

    The estimate is clipped to ``(0, T]``. ``ess_per_second`` is filled in when
    the chain's wall-clock ``seconds`` are given.
    """
    x = _values(series)
    T = x.size
    if T < 100:
        raise ValueError(f"effective sample size needs at least 100 draws, got {T}")
    tau, last = geyer_truncation(autocorrelation(x))
    ess = T / tau if tau > 0 else float(T)
    ess = float(min(max(ess, np.finfo(float).tiny), T))
    per_second = ess / seconds if seconds else None
    return EssReport(ess, per_second, last)


def fisher_correlation(rho):
    """``log((1 + rho) / (1 - rho))``."""
    return np.log1p(rho) - np.log1p(-rho)


def inverse_fisher_correlation(z):
    return np.tanh(np.asarray(z) / 2.0)


def transform_draws(Sigma, beta=None, rho_tol: float = 1e-12) -> dict:
    """Plot-ready scalar series from covariance and coefficient draws.

    Keys are ``beta_j``, ``log_sigma2_k`` and ``fisher_rho_jk`` (1-based, j < k),
    where ``rho_jk = sigma_jk / sqrt(sigma_jj sigma_kk)`` is the usual correlation.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.ndim != 3 or Sigma.shape[1] != Sigma.shape[2]:
        raise ValueError(f"Sigma draws must have shape (m, p, p), got {Sigma.shape}")
    out = {}
    if beta is not None:
        beta = np.asarray(beta, dtype=float)
        for j in range(beta.shape[1]):
            out[f"beta_{j + 1}"] = beta[:, j]
    diag = np.diagonal(Sigma, axis1=1, axis2=2)
    if np.any(diag <= 0):
        raise ValueError("Sigma draws must have positive diagonals")
    p = Sigma.shape[1]
    for k in range(p):
        out[f"log_sigma2_{k + 1}"] = np.log(diag[:, k])
    for j in range(p):
        for k in range(j + 1, p):
            rho = Sigma[:, j, k] / np.sqrt(diag[:, j] * diag[:, k])
            if np.any(np.abs(rho) >= 1 + rho_tol):
                raise np.linalg.LinAlgError(f"|rho_{j + 1}{k + 1}| >= 1 in some draw")
            out[f"fisher_rho_{j + 1}{k + 1}"] = fisher_correlation(np.clip(rho, -1 + 1e-16, 1 - 1e-16))
    return out


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


class Comparison(NamedTuple):
    ks_statistic: float
    probabilities: np.ndarray
    quantiles_a: np.ndarray
    quantiles_b: np.ndarray

    @property
    def qq_pairs(self) -> np.ndarray:
        return np.column_stack([self.quantiles_a, self.quantiles_b])


def compare_chains(a, b) -> Comparison:
    """KS statistic and matched quantiles at 199 probabilities 0.005..0.995."""
    a, b = _values(a), _values(b)
    if a.size < 100 or b.size < 100:
        raise ValueError("compare_chains needs at least 100 draws per series")
    return Comparison(
        ks_statistic(a, b),
        QQ_PROBABILITIES.copy(),
        np.quantile(a, QQ_PROBABILITIES),
        np.quantile(b, QQ_PROBABILITIES),
    )


def summarize(series) -> dict:
    x = _values(series)
    out = {"mean": float(x.mean()), "sd": float(x.std(ddof=1))}
    for q, v in zip(SUMMARY_QUANTILES, np.percentile(x, SUMMARY_QUANTILES)):
        out[f"q{q:g}"] = float(v)
    return out


def batch_means_se(series, n_batches: int = 50) -> float:
    """Monte Carlo standard error of the mean of a correlated series by batch means."""
    x = _values(series)
    size = x.size // n_batches
    if size < 1:
        raise ValueError("series shorter than the number of batches")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))
