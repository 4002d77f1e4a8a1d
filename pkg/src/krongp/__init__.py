"""Kronecker-structured heterogeneous multi-output Gaussian processes.

Repeated-measures data live on a complete grid over three covariate
components and a set of outputs (Gaussian or Bernoulli). The latent field
has a separable covariance, so every expensive operation factorizes over the
grid components. Inference is by NUTS over all parameters, latent
coordinates and missing outcomes.
"""

__version__ = "0.1.0"

from .diagnostics import ess, rhat, summarize
from .evaluate import (
    ComparisonMatrix,
    ExperimentSettings,
    compare_methods,
    cv_folds,
    loss_bernoulli,
    loss_gaussian,
    run_experiment,
    wilcoxon_paired,
)
from .estimator import KronGPRegressor
from .fit import FitResult, fit_model
from .grid import (
    BERNOULLI,
    GAUSSIAN,
    CellIndex,
    GridComponent,
    GridDesign,
    OutcomeMatrix,
    cell_index,
    flat_index,
    ingest_long_csv,
    one_hot,
    standardize,
)
from .kernels import KernelSpec, linear, se_ard
from .kron import chol_factor, dense_kron, kron_logdet, kron_matvec
from .model import (
    KronGPPosterior,
    ModelConfig,
    ParameterState,
    build_latent_f,
    dense_latent_covariance,
    log_posterior_and_grad,
)
from .sampler import PosteriorDraws, SamplerSettings, nuts_sample
from .simulate import SimConfig, latent_functions, simulate_dataset

__all__ = [
    "BERNOULLI",
    "GAUSSIAN",
    "CellIndex",
    "ComparisonMatrix",
    "ExperimentSettings",
    "FitResult",
    "GridComponent",
    "GridDesign",
    "KernelSpec",
    "KronGPRegressor",
    "KronGPPosterior",
    "ModelConfig",
    "OutcomeMatrix",
    "ParameterState",
    "PosteriorDraws",
    "SamplerSettings",
    "SimConfig",
    "build_latent_f",
    "cell_index",
    "chol_factor",
    "compare_methods",
    "cv_folds",
    "dense_kron",
    "dense_latent_covariance",
    "ess",
    "fit_model",
    "flat_index",
    "ingest_long_csv",
    "kron_logdet",
    "kron_matvec",
    "latent_functions",
    "linear",
    "log_posterior_and_grad",
    "loss_bernoulli",
    "loss_gaussian",
    "nuts_sample",
    "one_hot",
    "rhat",
    "run_experiment",
    "se_ard",
    "simulate_dataset",
    "standardize",
    "summarize",
    "wilcoxon_paired",
]
