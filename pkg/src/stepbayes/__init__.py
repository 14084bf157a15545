"""Bayesian binary regression with random step-function priors."""

__version__ = "0.1.0"

from .core import (
    ChangePointState,
    DomainError,
    HierarchyPrior,
    IntervalCounts,
    LabeledDataset,
    ResourceError,
    SplitMove,
    StepFunction,
    UsageError,
    compute_counts,
    locate_interval,
    shift_counts,
)
from .estimator import (
    ModelSizeHistogram,
    PosteriorMeanCurve,
    bernoulli_kl,
    hellinger_step_densities,
    lp_distance,
    model_size_histogram,
    poisson_tail_bound,
    posterior_mean_curve,
)
from .marginal import (
    dyadic_exact_posterior,
    log_beta_integral,
    log_phi,
    log_rho,
    posterior_value_mean,
    sample_success_probabilities,
)
from .sampler import ChainTrace, KernelConfig, independence_step, mh_step, propose, run_chain

__all__ = [
    "ChainTrace",
    "ChangePointState",
    "DomainError",
    "HierarchyPrior",
    "IntervalCounts",
    "KernelConfig",
    "LabeledDataset",
    "ModelSizeHistogram",
    "PosteriorMeanCurve",
    "ResourceError",
    "SplitMove",
    "StepFunction",
    "UsageError",
    "bernoulli_kl",
    "compute_counts",
    "dyadic_exact_posterior",
    "hellinger_step_densities",
    "independence_step",
    "locate_interval",
    "log_beta_integral",
    "log_phi",
    "log_rho",
    "lp_distance",
    "mh_step",
    "model_size_histogram",
    "poisson_tail_bound",
    "posterior_mean_curve",
    "posterior_value_mean",
    "propose",
    "run_chain",
    "sample_success_probabilities",
    "shift_counts",
]
