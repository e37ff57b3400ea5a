"""Bayesian hierarchical baseline-category logit models for longitudinal
categorical count data, with exploratory tools and a reproducible CLI.

The package fits multinomial logit models whose log-odds against a
reference category carry week-specific fixed effects and a per-subject
random intercept, by adaptive random-walk Metropolis-within-Gibbs, and
ranks candidate linear predictors by DIC.  Exploration utilities cover the
chi-square independence test, correspondence analysis and mean profiles.
"""

from .data import (CategorySet, ContingencyTable, FactorDef, Observation,
                   ObservationTable, Schema, contingency, load_counts,
                   load_events, schema_for, write_counts_csv)
from .design import (CoefBlock, ModelSpec, ParameterLayout, PriorConfig, Term,
                     build_layout, intercept, interaction, linear_predictor,
                     main_effect, preset, spec_from_json, spec_to_json,
                     with_priors)
from .errors import (ConsistencyError, ContractError, DataError,
                     DegenerateTableError, Error, GridBoundaryError,
                     SamplerInitError, SchemaError)
from .explore import (ChiSquareResult, CorrespondenceResult, ProfileRow,
                      chi_square, correspondence, mean_profiles)
from .inference import (Comparison, ComparisonEntry, DicReport, IntervalRow,
                        IntervalTable, ParamSummary, PosteriorSummary,
                        central_interval, compare, deviance, dic,
                        interval_table, summarize, summarize_chains)
from .likelihood import (eta_matrix, log_likelihood, log_likelihood_grad,
                         log_posterior, log_posterior_grad, log_prior,
                         probabilities)
from .sampler import (AdaptConfig, ChainState, DegenerateChainWarning,
                      PosteriorDraws, SamplerConfig, ess, ess_pooled, rhat,
                      run, split_rhat, update_block)
from .simulate import (GridPosterior, GridSpec, RecoveryReport,
                       SimulationResult, SimulationSpec, generate,
                       generate_full, grid_posterior, recovery_trial,
                       sim_spec_from_json)
from .special import chi2_sf, regularized_gamma_p, regularized_gamma_q

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "CategorySet", "ChainState", "ChiSquareResult",
    "CoefBlock", "Comparison", "ComparisonEntry", "ConsistencyError",
    "ContingencyTable", "ContractError", "CorrespondenceResult", "DataError",
    "DegenerateChainWarning", "DegenerateTableError", "DicReport", "Error",
    "FactorDef", "GridBoundaryError", "GridPosterior", "GridSpec",
    "IntervalRow", "IntervalTable", "ModelSpec", "Observation",
    "ObservationTable", "ParamSummary", "ParameterLayout", "PosteriorDraws",
    "PosteriorSummary", "PriorConfig", "ProfileRow", "RecoveryReport",
    "SamplerConfig", "SamplerInitError", "Schema", "SchemaError",
    "SimulationResult", "SimulationSpec", "Term", "build_layout",
    "central_interval", "chi2_sf", "chi_square", "compare", "contingency",
    "correspondence", "deviance", "dic", "ess", "ess_pooled", "eta_matrix",
    "generate", "generate_full", "grid_posterior", "intercept",
    "interaction", "interval_table", "linear_predictor", "load_counts",
    "load_events", "log_likelihood", "log_likelihood_grad", "log_posterior",
    "log_posterior_grad", "log_prior", "main_effect", "mean_profiles",
    "preset", "probabilities", "recovery_trial", "regularized_gamma_p",
    "regularized_gamma_q", "rhat", "run", "schema_for",
    "sim_spec_from_json", "spec_from_json", "spec_to_json", "split_rhat",
    "summarize", "summarize_chains", "update_block", "with_priors",
    "write_counts_csv",
]
