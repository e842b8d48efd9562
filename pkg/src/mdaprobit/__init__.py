"""Bayesian multinomial probit by marginal data augmentation.

Six samplers share one three-step skeleton: the original algorithms
``1.1, 1.2, 2.1, 3.1`` and the corrected ``1.3, 2.2, 3.2``.
"""

__version__ = "0.1.0"

from .distributions import (
    NotPositiveDefiniteError,
    SamplerStuckError,
    StagedInvWishart,
    make_rng,
    sample_chi_square,
    sample_inv_wishart,
    sample_mvn,
    sample_truncated_normal,
    sample_wishart,
    truncated_normal,
)
from .model import (
    ChainState,
    DegenerateTieError,
    Identification,
    MnpData,
    PriorSpec,
    check_constraint,
    classify,
    classify_rows,
    feasible_scale_interval,
    reduce_to_base,
)
from .samplers import (
    VARIANTS,
    AlgorithmVariant,
    ChainOutput,
    ConfigurationError,
    SamplerConfig,
    StuckChainError,
    get_variant,
    run_chain,
    run_chains,
    transition,
)
from .diagnostics import (
    autocorrelation,
    batch_means_se,
    compare_chains,
    effective_sample_size,
    ks_statistic,
    summarize,
    transform_draws,
)
from .experiments import (
    SimStudyConfig,
    generate_simulation,
    getting_it_right,
    run_paired_comparison,
)

__all__ = [
    "NotPositiveDefiniteError",
    "SamplerStuckError",
    "StagedInvWishart",
    "make_rng",
    "sample_chi_square",
    "sample_inv_wishart",
    "sample_mvn",
    "sample_truncated_normal",
    "sample_wishart",
    "truncated_normal",
    "ChainState",
    "DegenerateTieError",
    "Identification",
    "MnpData",
    "PriorSpec",
    "check_constraint",
    "classify",
    "classify_rows",
    "feasible_scale_interval",
    "reduce_to_base",
    "VARIANTS",
    "AlgorithmVariant",
    "ChainOutput",
    "ConfigurationError",
    "SamplerConfig",
    "StuckChainError",
    "get_variant",
    "run_chain",
    "run_chains",
    "transition",
    "autocorrelation",
    "batch_means_se",
    "compare_chains",
    "effective_sample_size",
    "ks_statistic",
    "summarize",
    "transform_draws",
    "SimStudyConfig",
    "generate_simulation",
    "getting_it_right",
    "run_paired_comparison",
]
