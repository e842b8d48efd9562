"""Random-variate layer shared by every sampler step.

All randomness flows through :class:`numpy.random.Generator` objects built by
:func:`make_rng`, which pins the bit generator (PCG64) and derives independent
per-chain substreams from one master seed via ``SeedSequence`` spawn keys.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import stats

MAX_ATTEMPTS = 10_000_000
SPD_RTOL = 1e-12


class SamplerStuckError(RuntimeError):
    """A rejection loop exceeded its attempt cap."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky factorisation failed; the offending matrix is kept on ``matrix``."""

    def __init__(self, message, matrix):
        super().__init__(message)
        self.matrix = np.array(matrix, copy=True)


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for substream ``stream`` of master ``seed``.

    Distinct ``stream`` values give statistically independent sequences; the
    same ``(seed, stream)`` always reproduces the same draws.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(ss))


def cholesky_spd(mat) -> np.ndarray:
    """Lower Cholesky factor, rejecting matrices that are not safely SPD.

    A pivot must exceed ``1e-12`` times the largest diagonal entry.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise NotPositiveDefiniteError(f"expected a square matrix, got shape {mat.shape}", mat)
    if not np.allclose(mat, mat.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefiniteError("matrix is not symmetric", mat)
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise NotPositiveDefiniteError("matrix is not positive definite", mat) from None
    scale = np.max(np.diag(mat))
    if scale <= 0 or np.min(np.diag(chol)) ** 2 <= SPD_RTOL * scale:
        raise NotPositiveDefiniteError("matrix is numerically singular", mat)
    return chol


def sample_chi_square(df, rng: np.random.Generator, size=None):
    """Chi-square draw(s) with ``df`` degrees of freedom, as Gamma(df/2, scale=2)."""
    df = float(df)
    if not df > 0:
        raise ValueError(f"chi-square degrees of freedom must be positive, got {df}")
    return 2.0 * rng.standard_gamma(df / 2.0, size=size)


def sample_truncated_chi_square(df, low, high, rng: np.random.Generator) -> float:
    """One chi-square draw restricted to ``(low, high)``, by inverse CDF.

    The uniform is placed on whichever tail keeps the most precision, the
    lower CDF below the median and the survival function above it.
    """
    dist = stats.chi2(float(df))
    if not 0 <= low < high:
        raise ValueError(f"need 0 <= low < high, got ({low}, {high})")
    if low >= dist.median():
        a, b = dist.sf(high), dist.sf(low)
        x = dist.isf(rng.uniform(a, b)) if b > a else np.nan
    else:
        a, b = dist.cdf(low), dist.cdf(high)
        x = dist.ppf(rng.uniform(a, b)) if b > a else np.nan
    if not np.isfinite(x):
        raise ValueError(f"interval ({low:.6g}, {high:.6g}) has no representable chi-square({df}) mass")
    return float(np.clip(x, np.nextafter(low, np.inf), np.nextafter(high, -np.inf)))


def sample_mvn(mean, cov, rng: np.random.Generator) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    chol = cholesky_spd(cov)
    if chol.shape[0] != mean.shape[0]:
        raise ValueError(f"mean has length {mean.shape[0]} but cov is {chol.shape}")
    return mean + chol @ rng.standard_normal(mean.shape[0])


def sample_chi_square_vec(dfs, rng: np.random.Generator) -> np.ndarray:
    dfs = np.asarray(dfs, dtype=float)
    if np.any(dfs <= 0):
        raise ValueError(f"chi-square degrees of freedom must be positive, got {dfs}")
    return 2.0 * rng.standard_gamma(dfs / 2.0)


def _bartlett_factor(df: float, d: int, rng: np.random.Generator) -> np.ndarray:
    # lower-triangular A with A A^T ~ Wishart(df, I_d)
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = np.sqrt(sample_chi_square_vec(df - np.arange(d), rng))
    rows, cols = np.tril_indices(d, -1)
    a[rows, cols] = rng.standard_normal(rows.size)
    return a


def _check_wishart_args(df, scale):
    scale = np.asarray(scale, dtype=float)
    if scale.ndim != 2 or scale.shape[0] != scale.shape[1]:
        raise ValueError(f"scale must be a square matrix, got shape {scale.shape}")
    d = scale.shape[0]
    if not df > d - 1:
        raise ValueError(f"degrees of freedom {df} must exceed d - 1 = {d - 1}")
    try:
        chol = cholesky_spd(scale)
    except NotPositiveDefiniteError as exc:
        raise ValueError(f"scale matrix is not SPD: {exc}") from exc
    return scale, chol, d


def sample_wishart(df, scale, rng: np.random.Generator) -> np.ndarray:
    """Wishart(df, scale) draw via the Bartlett decomposition."""
    scale, chol, d = _check_wishart_args(float(df), scale)
    x = chol @ _bartlett_factor(float(df), d, rng)
    out = x @ x.T
    return 0.5 * (out + out.T)


def sample_inv_wishart(df, scale, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart(df, scale) draw: the inverse of a Wishart(df, scale^-1) draw.

    Parameterised so that the mean is ``scale / (df - d - 1)``.
    """
    df = float(df)
    scale, _, d = _check_wishart_args(df, scale)
    # Wishart(df, scale^-1) = (L^-T A)(L^-T A)^T with scale = L L^T,
    # so its inverse is L A^-T A^-1 L^T.
    chol = np.linalg.cholesky(scale)
    a = _bartlett_factor(df, d, rng)
    m = chol @ np.linalg.inv(a).T
    out = m @ m.T
    return 0.5 * (out + out.T)


class StagedInvWishart:
    """Inverse-Wishart(df, scale) generated so the (1,1) entry comes first.

    The Bartlett factor is built in reversed coordinate order, which makes
    ``sigma_11 = scale[0, 0] / chi^2_{df-d+1}`` depend on a single chi-square
    variate. Rejection loops that only look at ``sigma_11`` can therefore test
    that variate and draw the remaining Bartlett entries once, on acceptance.
    The completed draw has exactly the Inverse-Wishart(df, scale) law.
    """

    def __init__(self, df, scale):
        df = float(df)
        scale, _, d = _check_wishart_args(df, scale)
        self.df = df
        self.d = d
        self.scale11 = float(scale[0, 0])
        rev = scale[::-1, ::-1]
        self._chol = cholesky_spd(_inv_sym(rev))  # L' with L' L'^T = (P scale P)^-1
        self.first_df = df - d + 1

    def first_chi2(self, rng: np.random.Generator, size=None):
        return sample_chi_square(self.first_df, rng, size=size)

    def sigma11(self, chi2):
        return self.scale11 / chi2

    def complete(self, chi2: float, rng: np.random.Generator) -> np.ndarray:
        d = self.d
        a = np.zeros((d, d))
        a[d - 1, d - 1] = np.sqrt(chi2)
        if d > 1:
            a[np.arange(d - 1), np.arange(d - 1)] = np.sqrt(sample_chi_square_vec(self.df - np.arange(d - 1), rng))
            rows, cols = np.tril_indices(d, -1)
            a[rows, cols] = rng.standard_normal(rows.size)
        m = np.linalg.inv(self._chol @ a)
        out = (m.T @ m)[::-1, ::-1]
        return 0.5 * (out + out.T)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.complete(self.first_chi2(rng), rng)


def _inv_sym(mat):
    inv = np.linalg.inv(mat)
    return 0.5 * (inv + inv.T)


class Side(enum.Enum):
    LOWER = "lower"  # support [bound, inf)
    UPPER = "upper"  # support (-inf, bound]


@dataclass(frozen=True)
class TruncSpec:
    bound: float
    side: Side

    def __post_init__(self):
        if not np.isfinite(self.bound):
            raise ValueError(f"truncation bound must be finite, got {self.bound}")
        if not isinstance(self.side, Side):
            object.__setattr__(self, "side", Side(self.side))


def _naive_lower(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.empty_like(a)
    pending = np.arange(a.size)
    attempts = 0
    while pending.size:
        z = rng.standard_normal(pending.size)
        ok = z >= a[pending]
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise SamplerStuckError(f"naive truncated-normal rejection exceeded {MAX_ATTEMPTS} attempts")
    return out


def _exponential_lower(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    # Robert (1995): translated exponential proposal with the optimal rate
    out = np.empty_like(a)
    pending = np.arange(a.size)
    attempts = 0
    while pending.size:
        ap = a[pending]
        lam = 0.5 * (ap + np.sqrt(ap * ap + 4.0))
        z = ap + rng.standard_exponential(pending.size) / lam
        u = rng.random(pending.size)
        ok = u <= np.exp(-0.5 * (z - lam) ** 2)
        out[pending[ok]] = z[ok]
        pending = pending[~ok]
        attempts += 1
        if attempts > MAX_ATTEMPTS:
            raise SamplerStuckError(f"exponential truncated-normal rejection exceeded {MAX_ATTEMPTS} attempts")
    return out


def standard_normal_lower_tail(a, rng: np.random.Generator, method: str = "auto") -> np.ndarray:
    """Draws ``z ~ N(0, 1)`` conditioned on ``z >= a`` elementwise.

    ``method`` is ``"auto"`` (naive rejection for ``a <= 0``, exponential
    rejection otherwise), ``"naive"`` or ``"exponential"``.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    if method == "naive":
        return _naive_lower(a, rng)
    if method == "exponential":
        return _exponential_lower(a, rng)
    if method != "auto":
        raise ValueError(f"unknown method {method!r}")
    out = np.empty_like(a)
    tail = a > 0
    if np.any(~tail):
        out[~tail] = _naive_lower(a[~tail], rng)
    if np.any(tail):
        out[tail] = _exponential_lower(a[tail], rng)
    return out


def truncated_normal(mu, sd, bound, lower, rng: np.random.Generator) -> np.ndarray:
    """Vectorised one-sided truncated normal.

    Element ``i`` is drawn from N(mu[i], sd[i]^2) restricted to ``[bound[i], inf)``
    when ``lower[i]`` is true and to ``(-inf, bound[i]]`` otherwise. Upper
    truncation is handled by negation.
    """
    mu, sd, bound, lower = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(sd, dtype=float),
        np.asarray(bound, dtype=float), np.asarray(lower, dtype=bool))
    sign = np.where(lower, 1.0, -1.0)
    a = sign * (bound - mu) / sd
    z = standard_normal_lower_tail(a.ravel(), rng).reshape(a.shape)
    x = mu + sign * sd * z
    # round-off in mu + sd*z can step just outside the region
    return np.where(lower, np.maximum(x, bound), np.minimum(x, bound))


def sample_truncated_normal(mu: float, var: float, trunc: TruncSpec, rng: np.random.Generator) -> float:
    if not var > 0:
        raise ValueError(f"variance must be positive, got {var}")
    draw = truncated_normal(mu, np.sqrt(var), trunc.bound, trunc.side is Side.LOWER, rng)
    return float(draw)
