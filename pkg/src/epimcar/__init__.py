"""Bayesian multivariate CAR inference for multi-pathogen monthly count panels."""

from .expected import (
    EpisodeRecord,
    LogisticFit,
    StandardizedProbs,
    aggregate_episodes,
    expected_panel,
    fit_logistic,
    standardize,
    standardized_probs,
)
from .inference import (
    CovarianceReport,
    bh_adjust,
    covariance_report,
    posterior_interval,
    posterior_p_zero,
    relative_risk_summary,
)
from .linalg import (
    NotPositiveDefinite,
    NotSymmetric,
    cholesky_factor,
    is_positive_definite,
    kronecker,
    sample_mvn_precision,
)
from .model import (
    CountPanel,
    HyperParams,
    ModelState,
    ProximitySpec,
    build_omega,
    build_w_autoregressive,
    build_w_neighborhood,
    covariance_from_cholesky,
    log_likelihood,
    log_posterior,
    log_prior_params,
    log_prior_phi,
    relative_risks,
)
from .sampler import (
    ChainConfig,
    NonFiniteDensity,
    PosteriorSamples,
    desk_profile,
    dic,
    run_chain,
    run_chains,
)
from .simulate import (
    SimOutput,
    SimScenario,
    scenario_five_virus,
    scenario_three_virus,
    simulate,
)

__version__ = "0.1.0"
