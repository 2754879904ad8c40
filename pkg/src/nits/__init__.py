"""Neural density estimation with exact normalization on bounded support.

A strictly increasing scalar network plays the role of a cdf: its
derivative is an unnormalized density whose integral over the support is
just the difference of endpoint values, so densities normalize exactly
without quadrature.  An autoregressively masked weight model emits one
such network per coordinate, giving joint densities, exact per-coordinate
sampling by bisection, and maximum-likelihood training.
"""

from .data import Dataset, load_csv, make_synthetic, standardize, write_csv
from .errors import (CheckpointError, ConvergenceError, DomainError,
                     NitsError, NumericalError)
from .estimator import NitsDensityEstimator
from .grad import loss_and_grad
from .model import (NitsModel, bounds_from_data, build_model,
                    discretized_log_pmf, emit_theta, load_checkpoint,
                    log_likelihood, log_likelihood_batch, save_checkpoint)
from .pnn import Bounds, PnnEval, PnnParams, PnnSpec, cdf, forward, log_pdf, partition
from .sampler import InversionConfig, monotonic_inverse, sample_1d, sample_ancestral
from .train import TrainConfig, TrainReport, evaluate_nll, fit
from .weight_model import WeightModelParams, WeightModelSpec

__version__ = "0.1.0"

__all__ = [
    "Bounds", "CheckpointError", "ConvergenceError", "Dataset", "DomainError",
    "InversionConfig", "NitsDensityEstimator", "NitsError", "NitsModel",
    "NumericalError", "PnnEval", "PnnParams", "PnnSpec", "TrainConfig",
    "TrainReport", "WeightModelParams", "WeightModelSpec", "bounds_from_data",
    "build_model", "cdf", "discretized_log_pmf", "emit_theta", "evaluate_nll",
    "fit", "forward", "load_checkpoint", "load_csv", "log_likelihood",
    "log_likelihood_batch", "log_pdf", "loss_and_grad", "make_synthetic",
    "monotonic_inverse", "partition", "sample_1d", "sample_ancestral",
    "save_checkpoint", "standardize", "write_csv", "__version__",
]
