import numpy as np
import pytest

from mdaprobit.distributions import make_rng
from mdaprobit.experiments import SimStudyConfig, generate_simulation
from mdaprobit.model import (
    ChainState,
    Identification,
    MnpData,
    PriorSpec,
    check_constraint,
    classify_rows,
    satisfies_identification,
)
from mdaprobit.samplers import (
    VARIANTS,
    ChainFailure,
    ConfigurationError,
    SamplerConfig,
    StuckChainError,
    check_compatibility,
    conditional_coefficients,
    get_variant,
    run_chain,
    run_chains,
    step1_alpha_prior,
    step1_gibbs_W,
    step2_alpha_beta,
    step3_sigma,
    transition,
)

CORRECTED = ("1.3", "2.2", "3.2")


@pytest.fixture(scope="module")
def sim():
    return generate_simulation(SimStudyConfig(seed=0))


def prior_for(variant, p=2, q=2):
    return PriorSpec.default(p, q, get_variant(variant).identification)


def test_conditional_coefficients_bivariate():
    coef, tau2 = conditional_coefficients(np.array([[1.0, 0.5], [0.5, 1.0]]))
    assert np.allclose(coef, [[0.0, 0.5], [0.5, 0.0]])
    assert np.allclose(tau2, [0.75, 0.75])


def test_conditional_coefficients_match_partitioned_formula():
    rng = make_rng(0)
    M = rng.standard_normal((4, 4))
    Sigma = M @ M.T + 4 * np.eye(4)
    coef, tau2 = conditional_coefficients(Sigma)
    for k in range(4):
        rest = [j for j in range(4) if j != k]
        c = np.linalg.solve(Sigma[np.ix_(rest, rest)], Sigma[rest, k])
        assert np.allclose(coef[k, rest], c)
        assert np.isclose(tau2[k], Sigma[k, k] - Sigma[k, rest] @ c)


def test_variant_table():
    assert set(VARIANTS) == {"1.1", "1.2", "1.3", "2.1", "2.2", "3.1", "3.2"}
    assert get_variant("3.2").identification is Identification.TRACE
    assert get_variant("2.2").identification is Identification.FIRST_DIAGONAL
    assert all(VARIANTS[v].constrained_sigma for v in CORRECTED)
    with pytest.raises(ConfigurationError):
        get_variant("4.1")


def test_compatibility_checks(sim):
    with pytest.raises(ConfigurationError):
        check_compatibility(get_variant("3.2"), prior_for("1.3"), sim.data)
    prior = PriorSpec(nu=2, S=np.eye(2), alpha0_sq=2, A=np.eye(2), beta0=np.array([1.0, 0.0]))
    with pytest.raises(ConfigurationError):
        check_compatibility(get_variant("1.3"), prior, sim.data)
    check_compatibility(get_variant("2.2"), prior, sim.data)
    with pytest.raises(ConfigurationError):
        check_compatibility(get_variant("1.3"), prior_for("1.3", q=3), sim.data)


def test_sampler_config_validation():
    assert SamplerConfig(100, 10, 3).n_retained == 30
    for bad in (dict(iterations=0), dict(iterations=10, burn_in=10), dict(iterations=10, thin=0)):
        with pytest.raises(ConfigurationError):
            SamplerConfig(**bad)


def test_alpha_prior_draw_distribution():
    rng = make_rng(1)
    prior = PriorSpec.default(2, 1)
    Sigma = np.array([[1.0, 0.3], [0.3, 2.0]])
    draws = np.array([step1_alpha_prior(Sigma, prior, rng) for _ in range(20_000)])
    scale = prior.alpha0_sq * np.trace(prior.S @ np.linalg.inv(Sigma))
    # scale / chi2_4 has mean scale / 2
    assert abs(draws.mean() / (scale / 2) - 1) < 0.05


def test_gibbs_scan_preserves_choices(sim):
    state = ChainState(np.array([-1.0, 1.0]), np.array([[1.0, 0.5], [0.5, 1.2]]),
                       np.where(np.arange(2) == sim.data.Y[:, None] - 1, 1.0, -1.0))
    rng = make_rng(2)
    for _ in range(20):
        state.W = step1_gibbs_W(state, sim.data, rng)
        assert np.array_equal(classify_rows(state.W), sim.data.Y)


def test_step2_scale_and_coefficients(sim):
    rng = make_rng(3)
    W = sim.W_true * 2.0
    prior = prior_for("1.3")
    alphas, betas = [], []
    for _ in range(2000):
        alpha, beta, beta_tilde = step2_alpha_beta(W, np.eye(2), sim.data, prior, rng)
        assert np.allclose(beta * alpha, beta_tilde)
        alphas.append(alpha)
        betas.append(beta)
    assert np.all(np.array(alphas) > 0)
    assert np.all(np.isfinite(betas))


def test_step3_corrected_transform_reproduces_choices(sim):
    rng = make_rng(4)
    beta = np.asarray(sim.config.beta_true)
    Z = 1.7 * (sim.W_true - sim.data.mean(beta))
    prior = prior_for("1.3")
    for name in ("1.3", "2.2"):
        res = step3_sigma(Z, beta, sim.data, prior, get_variant(name), 10_000, rng)
        assert not res.violation
        assert res.Sigma[0, 0] == 1.0
        assert np.array_equal(classify_rows(res.W), sim.data.Y)
        assert check_constraint(Z, beta, res.alpha, sim.data)


def test_step3_exact_fallback_matches_rejection(sim):
    from scipy import stats

    beta = np.asarray(sim.config.beta_true)
    Z = 1.7 * (sim.W_true - sim.data.mean(beta))
    prior, variant = prior_for("1.3"), get_variant("1.3")
    rng_a, rng_b = make_rng(8), make_rng(9)
    plain = [step3_sigma(Z, beta, sim.data, prior, variant, 10_000, rng_a).alpha for _ in range(2000)]
    capped = [step3_sigma(Z, beta, sim.data, prior, variant, 1, rng_b, exact_fallback=True) for _ in range(2000)]
    assert all(not r.violation and r.Sigma[0, 0] == 1.0 for r in capped)
    assert stats.ks_2samp(plain, [r.alpha for r in capped]).pvalue > 1e-3
    # an empty feasible interval still raises
    data = MnpData(np.array([1, 0]), np.ones((2, 1, 1)))
    with pytest.raises(StuckChainError):
        step3_sigma(np.array([[-1.0], [1.0]]), np.array([1.0]), data, PriorSpec.default(1, 1),
                    variant, 5, make_rng(10), exact_fallback=True)


def test_step3_trace_identification(sim):
    rng = make_rng(5)
    beta = np.asarray(sim.config.beta_true)
    Z = sim.W_true - sim.data.mean(beta)
    res = step3_sigma(Z, beta, sim.data, prior_for("3.2"), get_variant("3.2"), 10_000, rng)
    assert np.isclose(np.trace(res.Sigma), 2.0)


def test_step3_stuck_when_no_scale_is_feasible():
    data = MnpData(np.array([1, 0]), np.ones((2, 1, 1)))
    Z = np.array([[-1.0], [1.0]])
    prior = PriorSpec.default(1, 1)
    with pytest.raises(StuckChainError):
        step3_sigma(Z, np.array([1.0]), data, prior, get_variant("1.3"), 50, make_rng(6))
    # an unconstrained variant accepts and flags the violation instead
    res = step3_sigma(Z, np.array([1.0]), data, prior, get_variant("1.2"), 50, make_rng(6))
    assert res.violation


def test_run_chain_stuck_error_reports_iteration(sim, monkeypatch):
    import mdaprobit.samplers as samplers

    monkeypatch.setattr(samplers, "feasible_scale_interval", lambda *a: (float("nan"), float("nan")))
    with pytest.raises(StuckChainError) as info:
        run_chain("1.3", sim.data, prior_for("1.3"), SamplerConfig(5, max_rejections=3))
    assert info.value.iteration == 1


@pytest.mark.parametrize("name", sorted(VARIANTS))
def test_every_variant_runs_and_identifies(sim, name):
    out = run_chain(name, sim.data, prior_for(name), SamplerConfig(300, 100, 2, seed=7))
    assert out.n_draws == 100
    assert np.array_equal(out.iterations, np.arange(101, 301, 2))
    ident = get_variant(name).identification
    assert all(satisfies_identification(S, ident) for S in out.Sigma)
    assert np.all(np.isfinite(out.beta))
    assert np.all(np.linalg.eigvalsh(out.Sigma) > 0)
    if name in CORRECTED:
        assert out.total_violations == 0
        assert np.array_equal(classify_rows(out.final_state.W), sim.data.Y)


def test_uncorrected_transform_records_violations(sim):
    out = run_chain("1.2", sim.data, prior_for("1.2"), SamplerConfig(1000, 200, seed=8))
    assert out.violation_fraction > 0


def test_chain_is_deterministic(sim):
    cfg = SamplerConfig(200, 50, seed=9, keep_latent=(0, 3))
    a = run_chain("1.3", sim.data, prior_for("1.3"), cfg)
    b = run_chain("1.3", sim.data, prior_for("1.3"), cfg)
    assert np.array_equal(a.beta, b.beta) and np.array_equal(a.Sigma, b.Sigma)
    assert a.latent.shape == (150, 2, 2)
    assert np.array_equal(a.latent, b.latent)


def test_streams_give_different_chains(sim):
    a, b = run_chains("1.3", sim.data, prior_for("1.3"), SamplerConfig(100, seed=10), chains=2)
    assert not np.array_equal(a.beta, b.beta)


def test_numeric_failure_is_wrapped(sim):
    bad = ChainState(np.zeros(2), np.array([[1.0, 1.0], [1.0, 1.0]]), np.ones((sim.data.n, 2)))
    with pytest.raises(ChainFailure) as info:
        run_chain("1.3", sim.data, prior_for("1.3"), SamplerConfig(5), init=bad)
    assert info.value.iteration == 1


def test_transition_family_two_uses_prior_mean(sim):
    beta0 = np.array([-1.0, 1.5])
    prior = PriorSpec(nu=2, S=np.eye(2), alpha0_sq=2, A=1e-4 * np.eye(2), beta0=beta0)
    state = ChainState(beta0.copy(), np.eye(2), sim.W_true.copy())
    rng = make_rng(11)
    betas = []
    for _ in range(200):
        state, _, _ = transition(state, get_variant("2.2"), sim.data, prior, rng)
        betas.append(state.beta)
    # a prior sd of 0.01 dominates 50 observations
    assert np.allclose(np.mean(betas, axis=0), beta0, atol=0.05)
