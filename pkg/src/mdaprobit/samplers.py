"""Marginal data augmentation Gibbs samplers for the multinomial probit model.

Seven samplers share one implementation and differ only through the flags of
:class:`AlgorithmVariant`:

====  ======  ===========  ===========  ==============
name  family  corrected W  constrained  rescale beta
====  ======  ===========  ===========  ==============
1.1   1       no           no           no
1.2   1       yes          no           no
1.3   1       yes          yes          no
2.1   2       yes          no           no
2.2   2       yes          yes          no
3.1   3       no           no           yes
3.2   3       yes          yes          no
====  ======  ===========  ===========  ==============

Families 1 and 3 marginalise the working parameter when drawing beta; family 2
draws the covariance first and then beta given the identified latents. Family
3 fixes ``trace(Sigma) = p`` instead of ``sigma^2_11 = 1``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .distributions import (
    SamplerStuckError,
    cholesky_spd,
    StagedInvWishart,
    make_rng,
    sample_chi_square,
    sample_mvn,
    sample_truncated_chi_square,
    truncated_normal,
)
from .model import (
    ChainState,
    Identification,
    MnpData,
    PriorSpec,
    check_constraint,
    feasible_scale_interval,
    identified_scale,
    init_state,
)


class ConfigurationError(ValueError):
    """Sampler, prior and identification settings that cannot be combined."""


class StuckChainError(SamplerStuckError):
    """The constrained inverse-Wishart loop hit its rejection cap."""

    def __init__(self, message, iteration=None, history=()):
        super().__init__(message)
        self.iteration = iteration
        self.history = list(history)


class ChainFailure(RuntimeError):
    """A step failed; ``iteration`` says where and ``__cause__`` says why."""

    def __init__(self, iteration: int, cause: Exception):
        super().__init__(f"iteration {iteration}: {type(cause).__name__}: {cause}")
        self.iteration = iteration


@dataclass(frozen=True)
class AlgorithmVariant:
    name: str
    family: int
    corrected_transform: bool
    constrained_sigma: bool
    rescale_beta_step3: bool

    @property
    def identification(self) -> Identification:
        return Identification.TRACE if self.family == 3 else Identification.FIRST_DIAGONAL


VARIANTS = {
    v.name: v
    for v in (
        AlgorithmVariant("1.1", 1, False, False, False),
        AlgorithmVariant("1.2", 1, True, False, False),
        AlgorithmVariant("1.3", 1, True, True, False),
        AlgorithmVariant("2.1", 2, True, False, False),
        AlgorithmVariant("2.2", 2, True, True, False),
        AlgorithmVariant("3.1", 3, False, False, True),
        AlgorithmVariant("3.2", 3, True, True, False),
    )
}


def get_variant(variant) -> AlgorithmVariant:
    if isinstance(variant, AlgorithmVariant):
        return variant
    try:
        return VARIANTS[str(variant)]
    except KeyError:
        raise ConfigurationError(f"unknown algorithm {variant!r}; choose from {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int
    burn_in: int = 0
    thin: int = 1
    seed: int = 0
    max_rejections: int = 1_000_000
    exact_fallback: bool = False  # finish a capped first-diagonal draw exactly instead of raising
    keep_latent: tuple = ()  # observation indices whose W draws are stored

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigurationError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigurationError(f"burn_in must lie in [0, iterations), got {self.burn_in}")
        if self.thin < 1:
            raise ConfigurationError("thin must be at least 1")
        if self.max_rejections < 1:
            raise ConfigurationError("max_rejections must be positive")
        object.__setattr__(self, "keep_latent", tuple(int(i) for i in self.keep_latent))

    @property
    def n_retained(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


@dataclass
class ChainOutput:
    variant: str
    iterations: np.ndarray  # 1-based iteration index of each retained draw
    beta: np.ndarray  # (m, q)
    Sigma: np.ndarray  # (m, p, p), identified scale
    alpha: np.ndarray  # (m,)
    rejections: np.ndarray  # (m,) constrained-draw rejections at each retained iteration
    violations: np.ndarray  # (m,) bool, accepted covariance draw broke the choice constraint
    seconds: float
    latent: Optional[np.ndarray] = None  # (m, len(keep_latent), p)
    latent_index: tuple = ()
    total_rejections: int = 0
    total_violations: int = 0
    final_state: Optional[ChainState] = field(default=None, repr=False)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    @property
    def violation_fraction(self) -> float:
        return float(np.mean(self.violations))


class Step3Result(NamedTuple):
    alpha: float
    Sigma: np.ndarray
    W: np.ndarray
    beta: np.ndarray
    rejections: int
    violation: bool


def _inv_spd(mat) -> np.ndarray:
    inv = np.linalg.inv(mat)
    return 0.5 * (inv + inv.T)


def step1_alpha_prior(Sigma, prior: PriorSpec, rng: np.random.Generator) -> float:
    """Working-parameter draw ``alpha^2 ~ alpha0^2 tr(S Sigma^-1) / chi^2_{nu p}``; returns alpha^2."""
    Sinv = _inv_spd(Sigma)
    return float(prior.alpha0_sq * np.trace(prior.S @ Sinv) / sample_chi_square(prior.nu * prior.p, rng))


def conditional_coefficients(Sigma):
    """Regression coefficients and residual variances of each latent coordinate on the rest.

    Returns ``(coef, tau2)`` where ``coef[k]`` has ``coef[k, k] = 0`` and
    ``coef[k, -k] = Sigma[k, -k] Sigma[-k, -k]^-1``.
    """
    # precision form: tau2_k = 1 / P_kk and coef[k, j] = -P_kj / P_kk, with P from a
    # Cholesky inverse so the variances stay positive for any positive definite Sigma
    L = cholesky_spd(np.asarray(Sigma, dtype=float))
    L_inv = np.linalg.solve(L, np.eye(L.shape[0]))
    P = L_inv.T @ L_inv
    tau2 = 1.0 / np.diag(P)
    coef = -P * tau2[:, None]
    np.fill_diagonal(coef, 0.0)
    return coef, tau2


def step1_gibbs_W(state: ChainState, data: MnpData, rng: np.random.Generator) -> np.ndarray:
    """One systematic scan over latent coordinates k = 1..p.

    Observations are conditionally independent, so each coordinate is updated
    for all observations at once. Coordinate k is truncated to lie above every
    other coordinate and zero when ``Y_i = k``, below zero when ``Y_i = 0``, and
    below ``max(0, W_ij)`` when ``Y_i = j`` for some other j.
    """
    W = np.array(state.W, dtype=float, copy=True)
    mean = data.mean(state.beta)
    coef, tau2 = conditional_coefficients(state.Sigma)
    sd = np.sqrt(tau2)
    Y = data.Y
    n, p = W.shape
    rows = np.arange(n)
    chosen = Y > 0
    for k in range(p):
        mu = mean[:, k] + (W - mean) @ coef[k]
        others = np.delete(W, k, axis=1)
        best_other = np.maximum(others.max(axis=1), 0.0) if p > 1 else np.zeros(n)
        lower = Y == k + 1
        bound = np.where(lower, best_other, 0.0)
        rival = chosen & ~lower
        bound[rival] = np.maximum(W[rows[rival], Y[rival] - 1], 0.0)
        W[:, k] = truncated_normal(mu, sd[k], bound, lower, rng)
    return W


def _gls(data: MnpData, Sinv, A_inv, target, prior_mean=None):
    """Posterior precision pieces for beta given latents ``target`` (n, p) and covariance."""
    XtS = np.einsum("ipq,pr->iqr", data.X, Sinv)
    precision = np.einsum("iqr,irs->qs", XtS, data.X) + A_inv
    rhs = np.einsum("iqr,ir->q", XtS, target)
    if prior_mean is not None:
        rhs = rhs + A_inv @ prior_mean
    cov = _inv_spd(precision)
    return cov, cov @ rhs


def step2_alpha_beta(W_tilde, Sigma, data: MnpData, prior: PriorSpec, rng: np.random.Generator):
    """Joint draw of the working parameter and coefficients given expanded latents.

    Returns ``(alpha_star, beta_new, beta_tilde)`` with ``beta_new = beta_tilde / alpha_star``.
    """
    Sinv = _inv_spd(Sigma)
    A_inv = prior.A_inv
    cov, beta_hat = _gls(data, Sinv, A_inv, W_tilde)
    resid = W_tilde - data.mean(beta_hat)
    ss = (np.einsum("ip,pr,ir->", resid, Sinv, resid)
          + beta_hat @ A_inv @ beta_hat
          + np.trace(prior.S_tilde @ Sinv))
    alpha_sq = ss / sample_chi_square((data.n + prior.nu) * data.p, rng)
    beta_tilde = sample_mvn(beta_hat, alpha_sq * cov, rng)
    alpha = float(np.sqrt(alpha_sq))
    return alpha, beta_tilde / alpha, beta_tilde


def step3_sigma(Z, beta, data: MnpData, prior: PriorSpec, variant: AlgorithmVariant,
                max_rejections: int, rng: np.random.Generator, *,
                W_tilde=None, beta_tilde=None, exact_fallback: bool = False) -> Step3Result:
    """Expanded-scale covariance draw and return to the identified scale.

    ``Z`` holds the residuals ``W_tilde_i - alpha* X_i beta``. The covariance is
    drawn from Inv-Wishart(n + nu, S_tilde + sum Z_i Z_i^T); constrained variants
    redraw until the implied working parameter keeps every choice consistent.
    Only the scale is needed to test a draw, so under first-diagonal
    identification the rest of each rejected draw is never generated.
    ``W_tilde`` is needed by the legacy latent transform and ``beta_tilde`` by
    the beta rescaling of algorithm 3.1.

    Reaching ``max_rejections`` raises :class:`StuckChainError`. With
    ``exact_fallback`` and first-diagonal identification, the scale variate is
    instead drawn from its chi-square law restricted to the feasible interval,
    which is the distribution rejection would have produced.
    """
    Z = np.asarray(Z, dtype=float)
    iw = StagedInvWishart(data.n + prior.nu, prior.S_tilde + Z.T @ Z)
    first_diagonal = variant.identification is Identification.FIRST_DIAGONAL
    lo, hi = feasible_scale_interval(Z, beta, data)
    rejections = 0
    while True:
        if first_diagonal:
            # the working parameter depends on one chi-square variate; finish the draw only on acceptance
            chi2 = iw.first_chi2(rng)
            s = float(np.sqrt(iw.sigma11(chi2)))
            accept = lo < s < hi
            if accept or not variant.constrained_sigma:
                Sigma_tilde = iw.complete(chi2, rng)
                break
        else:
            Sigma_tilde = iw.sample(rng)
            s = identified_scale(Sigma_tilde, Identification.TRACE)
            accept = lo < s < hi
            if accept or not variant.constrained_sigma:
                break
        rejections += 1
        if rejections >= max_rejections and exact_fallback and first_diagonal and 0 <= lo < hi:
            # s in (lo, hi) is chi2 in (scale11 / hi^2, scale11 / lo^2)
            with np.errstate(divide="ignore"):
                low, high = iw.scale11 / np.array([hi, lo]) ** 2
            chi2 = sample_truncated_chi_square(iw.first_df, low, high, rng)
            s = float(np.sqrt(iw.sigma11(chi2)))
            Sigma_tilde = iw.complete(chi2, rng)
            break
        if rejections >= max_rejections:
            raise StuckChainError(f"constrained covariance draw rejected {rejections} times "
                                  f"(feasible scale interval ({lo:.6g}, {hi:.6g}))")
    ok = check_constraint(Z, beta, s, data)
    alpha = s
    Sigma = Sigma_tilde / alpha**2
    if first_diagonal:
        Sigma[0, 0] = 1.0
    if variant.corrected_transform:
        W = Z / alpha + data.mean(beta)
    else:
        if W_tilde is None:
            raise ValueError("the legacy latent transform needs W_tilde")
        W = np.asarray(W_tilde) / alpha
    beta_out = np.asarray(beta, dtype=float)
    if variant.rescale_beta_step3:
        if beta_tilde is None:
            raise ValueError("beta rescaling needs beta_tilde")
        beta_out = np.asarray(beta_tilde) / alpha
    return Step3Result(alpha, Sigma, W, beta_out, rejections, not ok)


def step_beta_given_W(W, Sigma, data: MnpData, prior: PriorSpec, rng: np.random.Generator) -> np.ndarray:
    """Coefficient draw ``beta ~ N(beta_hat, (sum X_i^T Sigma^-1 X_i + A^-1)^-1)``."""
    cov, beta_hat = _gls(data, _inv_spd(Sigma), prior.A_inv, W, prior_mean=prior.beta0)
    return sample_mvn(beta_hat, cov, rng)


def check_compatibility(variant: AlgorithmVariant, prior: PriorSpec, data: Optional[MnpData] = None):
    if prior.identification is not variant.identification:
        raise ConfigurationError(
            f"algorithm {variant.name} requires {variant.identification.value} identification, "
            f"got {prior.identification.value}")
    if variant.family in (1, 3) and np.any(prior.beta0 != 0):
        raise ConfigurationError(f"algorithm {variant.name} requires beta0 = 0; use family 2 for a nonzero prior mean")
    if data is not None and (data.p != prior.p or data.q != prior.q):
        raise ConfigurationError(f"prior is sized p={prior.p}, q={prior.q} but data has p={data.p}, q={data.q}")


def transition(state: ChainState, variant: AlgorithmVariant, data: MnpData, prior: PriorSpec,
               rng: np.random.Generator, max_rejections: int = 1_000_000, exact_fallback: bool = False):
    """One full iteration. Returns ``(new_state, rejections, violation)``."""
    alpha1_sq = step1_alpha_prior(state.Sigma, prior, rng)
    W_star = step1_gibbs_W(state, data, rng)
    alpha1 = np.sqrt(alpha1_sq)
    if variant.family == 2:
        Z = alpha1 * (W_star - data.mean(state.beta))
        res = step3_sigma(Z, state.beta, data, prior, variant, max_rejections, rng,
                          W_tilde=alpha1 * W_star, exact_fallback=exact_fallback)
        beta = step_beta_given_W(res.W, res.Sigma, data, prior, rng)
        return ChainState(beta, res.Sigma, res.W, res.alpha), res.rejections, res.violation
    W_tilde = alpha1 * W_star
    alpha2, beta_new, beta_tilde = step2_alpha_beta(W_tilde, state.Sigma, data, prior, rng)
    Z = W_tilde - alpha2 * data.mean(beta_new)
    res = step3_sigma(Z, beta_new, data, prior, variant, max_rejections, rng,
                      W_tilde=W_tilde, beta_tilde=beta_tilde, exact_fallback=exact_fallback)
    return ChainState(res.beta, res.Sigma, res.W, res.alpha), res.rejections, res.violation


def run_chain(variant, data: MnpData, prior: PriorSpec, config: SamplerConfig,
              rng: Optional[np.random.Generator] = None, init: Optional[ChainState] = None) -> ChainOutput:
    """Run one chain and keep the post-burn-in, thinned draws.

    ``rng`` defaults to ``make_rng(config.seed)``.
    """
    variant = get_variant(variant)
    check_compatibility(variant, prior, data)
    rng = make_rng(config.seed) if rng is None else rng
    state = init_state(data, prior) if init is None else init.copy()
    m = config.n_retained
    keep = np.asarray(config.keep_latent, dtype=int)
    out = dict(
        iterations=np.empty(m, dtype=np.int64),
        beta=np.empty((m, data.q)),
        Sigma=np.empty((m, data.p, data.p)),
        alpha=np.empty(m),
        rejections=np.zeros(m, dtype=np.int64),
        violations=np.zeros(m, dtype=bool),
    )
    latent = np.empty((m, keep.size, data.p)) if keep.size else None
    total_rej = total_viol = 0
    history = []
    j = 0
    start = time.perf_counter()
    for t in range(config.iterations):
        try:
            state, rej, viol = transition(state, variant, data, prior, rng, config.max_rejections,
                                           config.exact_fallback)
        except StuckChainError as exc:
            exc.iteration = t + 1
            exc.history = history[-100:]
            raise
        except (np.linalg.LinAlgError, SamplerStuckError, ValueError) as exc:
            raise ChainFailure(t + 1, exc) from exc
        total_rej += rej
        total_viol += viol
        history.append(rej)
        if t >= config.burn_in and (t - config.burn_in) % config.thin == 0:
            out["iterations"][j] = t + 1
            out["beta"][j] = state.beta
            out["Sigma"][j] = state.Sigma
            out["alpha"][j] = state.alpha
            out["rejections"][j] = rej
            out["violations"][j] = viol
            if latent is not None:
                latent[j] = state.W[keep]
            j += 1
    seconds = time.perf_counter() - start
    return ChainOutput(variant=variant.name, seconds=seconds, latent=latent,
                       latent_index=tuple(keep.tolist()), total_rejections=total_rej,
                       total_violations=total_viol, final_state=state, **out)


def run_chains(variant, data: MnpData, prior: PriorSpec, config: SamplerConfig,
               chains: int = 1, streams: Optional[Sequence[int]] = None) -> list:
    """Independent chains on substreams ``0..chains-1`` of ``config.seed``."""
    streams = range(chains) if streams is None else streams
    return [run_chain(variant, data, prior, config, rng=make_rng(config.seed, s)) for s in streams]
