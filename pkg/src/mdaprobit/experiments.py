"""Simulation-study harness: synthetic data, paired sampler runs, choice probabilities
and the joint-distribution ("getting it right") check of a transition kernel."""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .diagnostics import DegenerateSeriesError, EssReport, compare_chains, effective_sample_size, transform_draws
from .distributions import make_rng, sample_inv_wishart
from .model import ChainState, MnpData, PriorSpec, classify_rows, identified_scale
from .samplers import ChainOutput, SamplerConfig, get_variant, run_chain, transition

# chain settings of the two reference protocols
SIMULATION_PROTOCOL = dict(iterations=15_000, burn_in=5_000, thin=1)
PRICE_DATA_PROTOCOL = dict(iterations=300_000, burn_in=100_000, thin=10)


@dataclass(frozen=True)
class CovariateBlock:
    """Rows ``start..stop-1`` get covariate column ``j`` drawn from ``Uniform(bounds[j])``."""

    start: int
    stop: int
    bounds: tuple

    def __post_init__(self):
        for lo, hi in self.bounds:
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"invalid uniform bounds ({lo}, {hi})")


def default_blocks(n: int) -> tuple:
    half = n // 2
    return (
        CovariateBlock(0, half, ((-0.5, 0.5), (-1.0, 1.0))),
        CovariateBlock(half, n, ((0.4, 1.5), (0.8, 3.0))),
    )


@dataclass(frozen=True)
class SimStudyConfig:
    n: int = 50
    beta_true: tuple = (-np.sqrt(2.0), 1.0)
    Sigma_true: tuple = ((1.0, 0.5), (0.5, 1.0))
    covariate_blocks: Optional[tuple] = None
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        beta = np.asarray(self.beta_true, dtype=float)
        Sigma = np.asarray(self.Sigma_true, dtype=float)
        if Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
            raise ValueError("Sigma_true must be square")
        np.linalg.cholesky(Sigma)
        blocks = self.covariate_blocks if self.covariate_blocks is not None else default_blocks(self.n)
        covered = np.zeros(self.n, dtype=int)
        for b in blocks:
            if len(b.bounds) != beta.size:
                raise ValueError(f"block has {len(b.bounds)} column bounds but q = {beta.size}")
            covered[b.start:b.stop] += 1
        if not np.all(covered == 1):
            raise ValueError("covariate blocks must cover every observation exactly once")
        object.__setattr__(self, "covariate_blocks", tuple(blocks))

    @property
    def p(self) -> int:
        return len(self.Sigma_true)

    @property
    def q(self) -> int:
        return len(self.beta_true)


@dataclass(frozen=True)
class SimulatedData:
    data: MnpData
    W_true: np.ndarray = field(repr=False)  # audit only; never handed to a sampler
    config: SimStudyConfig = None


def generate_simulation(config: SimStudyConfig = SimStudyConfig(), rng=None) -> SimulatedData:
    """Draw covariates blockwise, latents ``W_i ~ N(X_i beta, Sigma)`` and the implied choices."""
    rng = make_rng(config.seed) if rng is None else rng
    beta = np.asarray(config.beta_true, dtype=float)
    Sigma = np.asarray(config.Sigma_true, dtype=float)
    X = np.empty((config.n, config.p, config.q))
    for block in config.covariate_blocks:
        rows = block.stop - block.start
        for j, (lo, hi) in enumerate(block.bounds):
            X[block.start:block.stop, :, j] = rng.uniform(lo, hi, size=(rows, config.p))
    chol = np.linalg.cholesky(Sigma)
    W = X @ beta + rng.standard_normal((config.n, config.p)) @ chol.T
    return SimulatedData(MnpData(classify_rows(W), X), W, config)


def estimate_choice_probabilities(beta, Sigma, X_i, mc_draws: int, rng) -> np.ndarray:
    """Monte Carlo choice frequencies for one observation, categories ``0..p``."""
    if mc_draws < 10_000:
        raise ValueError("use at least 10_000 Monte Carlo draws")
    X_i = np.asarray(X_i, dtype=float)
    p = X_i.shape[0]
    chol = np.linalg.cholesky(np.asarray(Sigma, dtype=float))
    W = X_i @ np.asarray(beta, dtype=float) + rng.standard_normal((mc_draws, p)) @ chol.T
    return np.bincount(classify_rows(W), minlength=p + 1) / mc_draws


def chain_series(out: ChainOutput) -> dict:
    """Transformed scalar series for a chain, without constant (identified) coordinates."""
    series = transform_draws(out.Sigma, out.beta)
    return {k: v for k, v in series.items() if np.ptp(v) > 0}


@dataclass
class PairedRunReport:
    variant_a: str
    variant_b: str
    ks: dict
    ess_a: dict
    ess_b: dict
    violation_fraction: float
    wall_clock_ratio: float  # seconds of b / seconds of a
    chain_a: Optional[ChainOutput] = field(default=None, repr=False)
    chain_b: Optional[ChainOutput] = field(default=None, repr=False)


def _ess_table(series: dict, seconds: float) -> dict:
    out = {}
    for name, values in series.items():
        try:
            out[name] = effective_sample_size(values, seconds)
        except DegenerateSeriesError:
            out[name] = EssReport(float("nan"), None, 0)
    return out


def _run(args):
    variant, data, prior, config, stream = args
    return run_chain(variant, data, prior, config, rng=make_rng(config.seed, stream))


def default_workers() -> int:
    return max(1, int(os.environ.get("MDAPROBIT_THREADS", "1")))


def run_paired_comparison(data: MnpData, prior: PriorSpec, variant_a, variant_b, config: SamplerConfig,
                          streams=(0, 1), workers: Optional[int] = None) -> PairedRunReport:
    """Run two samplers on the same data and compare their transformed marginals.

    Chain ``a`` uses substream ``streams[0]`` of ``config.seed`` and chain ``b``
    ``streams[1]``. With more than one worker the chains run in separate processes.
    """
    va, vb = get_variant(variant_a), get_variant(variant_b)
    if va.identification is not vb.identification:
        raise ValueError(f"algorithms {va.name} and {vb.name} use different identifications")
    jobs = [(va, data, prior, config, streams[0]), (vb, data, prior, config, streams[1])]
    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=2) as pool:
            out_a, out_b = pool.map(_run, jobs)
    else:
        out_a, out_b = map(_run, jobs)
    sa, sb = chain_series(out_a), chain_series(out_b)
    names = [k for k in sa if k in sb]
    ks = {k: compare_chains(sa[k], sb[k]).ks_statistic for k in names}
    unconstrained = [o for o, v in ((out_a, va), (out_b, vb)) if not v.constrained_sigma]
    viol = (unconstrained or [out_a])[0].violation_fraction
    return PairedRunReport(va.name, vb.name, ks, _ess_table(sa, out_a.seconds), _ess_table(sb, out_b.seconds),
                           viol, out_b.seconds / out_a.seconds, out_a, out_b)


def draw_prior(prior: PriorSpec, rng) -> tuple:
    """One ``(beta, Sigma)`` draw from the identified-scale prior."""
    Sigma_tilde = sample_inv_wishart(prior.nu, prior.S_tilde, rng)
    alpha = identified_scale(Sigma_tilde, prior.identification)
    beta = prior.beta0 + np.linalg.cholesky(prior.A) @ rng.standard_normal(prior.q)
    return beta, Sigma_tilde / alpha**2


def draw_latents(X, beta, Sigma, rng) -> np.ndarray:
    n, p, _ = X.shape
    return X @ beta + rng.standard_normal((n, p)) @ np.linalg.cholesky(Sigma).T


def getting_it_right(variant, X, prior: PriorSpec, cycles: int, rng, transitions_per_cycle: int = 1,
                     statistics=None) -> tuple:
    """Forward and successive-conditional simulations of the joint (parameters, data) law.

    The forward simulator draws parameters from the prior. The successive-
    conditional simulator alternates a fresh ``(W, Y) ~ p(W, Y | beta, Sigma)``
    with ``transitions_per_cycle`` sampler iterations. If the kernel leaves the
    posterior invariant, both produce parameters distributed as the prior.
    ``statistics`` maps ``(beta, Sigma)`` to a 1-d array; by default it returns
    ``beta`` followed by ``log(diag(Sigma))``. Returns two ``(cycles, k)`` arrays.
    """
    variant = get_variant(variant)
    X = np.asarray(X, dtype=float)
    if statistics is None:
        def statistics(beta, Sigma):
            return np.concatenate([beta, np.log(np.diag(Sigma))])
    forward = np.array([statistics(*draw_prior(prior, rng)) for _ in range(cycles)])
    beta, Sigma = draw_prior(prior, rng)
    successive = []
    for _ in range(cycles):
        W = draw_latents(X, beta, Sigma, rng)
        data = MnpData(classify_rows(W), X)
        state = ChainState(beta, Sigma, W, 1.0)
        for _ in range(transitions_per_cycle):
            state, _, _ = transition(state, variant, data, prior, rng)
        beta, Sigma = state.beta, state.Sigma
        successive.append(statistics(beta, Sigma))
    return forward, np.array(successive)


def coverage_replications(variant, replications: int, config: SamplerConfig,
                          sim: SimStudyConfig = SimStudyConfig(), level: float = 0.95) -> list:
    """Per-replication posterior interval coverage of the generating values.

    Replication ``r`` simulates data with seed ``sim.seed + r`` and runs the
    chain with seed ``config.seed + r``. Returns a list of dicts keyed by
    ``beta_j`` and ``rho_12`` (when p >= 2) with booleans.
    """
    variant = get_variant(variant)
    tail = 100 * (1 - level) / 2
    beta_true = np.asarray(sim.beta_true)
    Sigma_true = np.asarray(sim.Sigma_true)
    prior = PriorSpec.default(sim.p, sim.q, variant.identification)
    results = []
    for r in range(replications):
        gen = generate_simulation(SimStudyConfig(sim.n, sim.beta_true, sim.Sigma_true, sim.covariate_blocks,
                                                 sim.seed + r))
        cfg = replace(config, seed=config.seed + r, keep_latent=())
        t0 = time.perf_counter()
        out = run_chain(variant, gen.data, prior, cfg)
        row = {"seconds": time.perf_counter() - t0}
        for j in range(sim.q):
            lo, hi = np.percentile(out.beta[:, j], [tail, 100 - tail])
            row[f"beta_{j + 1}"] = bool(lo <= beta_true[j] <= hi)
        if sim.p >= 2:
            rho = out.Sigma[:, 0, 1] / np.sqrt(out.Sigma[:, 0, 0] * out.Sigma[:, 1, 1])
            lo, hi = np.percentile(rho, [tail, 100 - tail])
            truth = Sigma_true[0, 1] / np.sqrt(Sigma_true[0, 0] * Sigma_true[1, 1])
            row["rho_12"] = bool(lo <= truth <= hi)
        results.append(row)
    return results
