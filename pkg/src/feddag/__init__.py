"""Personalized federated learning of multiple Bayesian-network structures."""
from .admm import EstimatorConfig, FitResult, Mode, fit, threshold_graph
from .dag import h_and_grad, is_acyclic_exact, matrix_exp
from .types import (
    AdmmState,
    BinaryGraph,
    PenaltyConfig,
    SiteDataset,
    WeightedAdjacency,
    seeded_rng,
    validate_problem,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmState",
    "BinaryGraph",
    "EstimatorConfig",
    "FitResult",
    "Mode",
    "PenaltyConfig",
    "SiteDataset",
    "WeightedAdjacency",
    "fit",
    "h_and_grad",
    "is_acyclic_exact",
    "matrix_exp",
    "seeded_rng",
    "threshold_graph",
    "validate_problem",
]
