import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from scipy import stats

from mdaprobit.diagnostics import (
    QQ_PROBABILITIES,
    DegenerateSeriesError,
    ScalarSeries,
    autocorrelation,
    batch_means_se,
    compare_chains,
    effective_sample_size,
    fisher_correlation,
    geyer_truncation,
    inverse_fisher_correlation,
    ks_statistic,
    summarize,
    transform_draws,
)
from mdaprobit.distributions import make_rng

AR1_ESS = 5263.16  # T (1 - phi) / (1 + phi) at T = 1e5, phi = 0.9
KS_SHIFT_ONE = 0.382925  # sup |Phi(x) - Phi(x - 1)| = 2 Phi(1/2) - 1


def ar1(phi, T, seed):
    rng = make_rng(seed)
    e = rng.standard_normal(T)
    x = np.empty(T)
    x[0] = e[0] / np.sqrt(1 - phi**2)
    for t in range(1, T):
        x[t] = phi * x[t - 1] + e[t]
    return x


@pytest.fixture(scope="module")
def ar_series():
    return ar1(0.9, 100_000, 0)


def test_ar1_autocorrelation(ar_series):
    rho = autocorrelation(ar_series, 5)
    assert rho[0] == 1.0
    assert abs(rho[1] - 0.9) < 0.01
    assert np.allclose(rho, 0.9 ** np.arange(6), atol=0.03)


def test_ar1_effective_sample_size(ar_series):
    rep = effective_sample_size(ar_series, seconds=2.0)
    assert abs(rep.ess / AR1_ESS - 1) < 0.2
    assert np.isclose(rep.ess_per_second, rep.ess / 2.0)
    assert rep.lag_cutoff > 10


def test_iid_effective_sample_size_close_to_length():
    x = make_rng(1).standard_normal(20_000)
    ess = effective_sample_size(x).ess
    assert 0.85 * 20_000 < ess <= 20_000


def test_autocorrelation_matches_direct_sum():
    x = make_rng(2).standard_normal(300).cumsum()
    xc = x - x.mean()
    direct = np.array([xc[: x.size - k] @ xc[k:] for k in range(6)]) / (xc @ xc)
    assert np.allclose(autocorrelation(x, 5), direct)


def test_geyer_truncation_stops_at_first_negative_pair():
    rho = np.array([1.0, 0.5, 0.2, 0.1, -0.3, 0.1, 0.05, 0.0])
    tau, last = geyer_truncation(rho)
    assert last == 3
    assert np.isclose(tau, 1 + 2 * (0.5 + 0.2 + 0.1))


def test_degenerate_and_short_series():
    with pytest.raises(DegenerateSeriesError):
        autocorrelation(np.ones(200))
    with pytest.raises(ValueError):
        effective_sample_size(np.arange(50.0))
    with pytest.raises(ValueError):
        ScalarSeries([1.0, np.nan, 2.0])
    with pytest.raises(ValueError):
        autocorrelation(np.arange(10.0), 10)


def test_ks_shifted_normals():
    rng = make_rng(3)
    a, b = rng.standard_normal(50_000), rng.standard_normal(50_000) + 1
    assert abs(ks_statistic(a, b) - KS_SHIFT_ONE) < 0.015
    assert abs(2 * stats.norm.cdf(0.5) - 1 - KS_SHIFT_ONE) < 1e-6


@settings(max_examples=100, deadline=None)
@given(a=hnp.arrays(float, st.integers(1, 60), elements=st.integers(-5, 5).map(float)),
       b=hnp.arrays(float, st.integers(1, 60), elements=st.floats(-5, 5, allow_subnormal=False)))
def test_ks_matches_scipy_including_ties(a, b):
    assert np.isclose(ks_statistic(a, b), stats.ks_2samp(a, b).statistic)


def test_ks_identical_samples_is_zero():
    x = make_rng(4).standard_normal(500)
    assert ks_statistic(x, x) == 0.0


def test_compare_chains_quantiles():
    rng = make_rng(5)
    a, b = rng.standard_normal(5000), rng.standard_normal(5000)
    cmp = compare_chains(a, b)
    assert cmp.probabilities.size == 199
    assert cmp.probabilities[0] == 0.005 and cmp.probabilities[-1] == 0.995
    assert np.allclose(cmp.quantiles_a, np.quantile(a, QQ_PROBABILITIES))
    assert cmp.qq_pairs.shape == (199, 2)
    assert cmp.ks_statistic < 0.05
    with pytest.raises(ValueError):
        compare_chains(a[:50], b)


@settings(max_examples=50, deadline=None)
@given(st.floats(-0.999, 0.999))
def test_fisher_roundtrip(rho):
    assert np.isclose(inverse_fisher_correlation(fisher_correlation(rho)), rho, atol=1e-9)


def test_fisher_values():
    assert fisher_correlation(0.0) == 0.0
    assert np.isclose(fisher_correlation(0.5), np.log(3.0))


def test_transform_draws_keys_and_values():
    Sigma = np.array([[[1.0, 0.5], [0.5, 4.0]], [[1.0, -0.2], [-0.2, 0.25]]])
    beta = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = transform_draws(Sigma, beta)
    assert list(out) == ["beta_1", "beta_2", "log_sigma2_1", "log_sigma2_2", "fisher_rho_12"]
    assert np.allclose(out["log_sigma2_2"], np.log([4.0, 0.25]))
    assert np.allclose(out["fisher_rho_12"], fisher_correlation(np.array([0.25, -0.4])))
    assert np.array_equal(out["beta_2"], [2.0, 4.0])


def test_transform_draws_three_dimensional():
    Sigma = np.broadcast_to(np.array([[1.0, 0.1, 0.2], [0.1, 2.0, 0.3], [0.2, 0.3, 3.0]]), (4, 3, 3))
    out = transform_draws(Sigma)
    assert {"fisher_rho_12", "fisher_rho_13", "fisher_rho_23"} <= set(out)


def test_transform_draws_rejects_invalid():
    with pytest.raises(ValueError):
        transform_draws(np.zeros((2, 2)))
    with pytest.raises(np.linalg.LinAlgError):
        transform_draws(np.array([[[1.0, 2.0], [2.0, 1.0]]]))


def test_summarize():
    x = np.arange(1, 1002, dtype=float)
    s = summarize(x)
    assert list(s) == ["mean", "sd", "q2.5", "q25", "q50", "q75", "q97.5"]
    assert s["mean"] == 501.0 and s["q50"] == 501.0


def test_batch_means_se(ar_series):
    se = batch_means_se(ar_series)
    # long-run sd of AR(1) 0.9 with unit innovations is 1 / (1 - 0.9) = 10
    assert abs(se / (10 / np.sqrt(ar_series.size)) - 1) < 0.3
    with pytest.raises(ValueError):
        batch_means_se(np.arange(10.0), 50)
