"""Dirichlet process mixtures of regressions whose weights depend on several grouping factors."""
from .components import BasePrior, LabeledSample, RegressionComponent
from .errors import MLDPError
from .gibbs import SamplerConfig, Trace, run
from .kernels import BACKEND
from .multiindex import BasisIndex, FactorConfig, GroupIndex, enumerate_groups, flat_index
from .prior import Hyperparams, LatentFactors, compute_weights

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BasePrior", "BasisIndex", "FactorConfig", "GroupIndex", "Hyperparams", "LabeledSample",
    "LatentFactors", "MLDPError", "RegressionComponent", "SamplerConfig", "Trace", "compute_weights",
    "enumerate_groups", "flat_index", "run",
]
