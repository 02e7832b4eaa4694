"""Inertial Langevin sampling: ILA, comparison integrators, diagnostics and theory checks."""

from .potentials import InvalidParameterError, PotentialSpec
from .samplers import SCHEMES, ChainState, SamplerConfig, derive_params, validate_config
from .metrics import GaussianSummary, SampleBatch, frechet_w2

__all__ = [
    "SCHEMES",
    "ChainState",
    "GaussianSummary",
    "InvalidParameterError",
    "PotentialSpec",
    "SampleBatch",
    "SamplerConfig",
    "derive_params",
    "frechet_w2",
    "validate_config",
]

__version__ = "0.1.0"
