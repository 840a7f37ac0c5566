"""Refine Gaussian approximate posteriors with radial normalizing flows and
quantify predictive quality against MC integration, probit approximations,
and an HMC gold standard."""

__version__ = "0.1.0"

from .laplace import GaussianPosterior, fit_laplace, fit_map, laplace_posterior
from .flows import RadialFlowStack, RadialLayer, RefinedPosterior
from .models import Dataset, Likelihood, LinearModel, TinyMLP
from .refine import RefineConfig, meanfield_vb, refine
from .rng import RngStream

__all__ = [
    "Dataset",
    "GaussianPosterior",
    "Likelihood",
    "LinearModel",
    "RadialFlowStack",
    "RadialLayer",
    "RefineConfig",
    "RefinedPosterior",
    "RngStream",
    "TinyMLP",
    "fit_laplace",
    "fit_map",
    "laplace_posterior",
    "meanfield_vb",
    "refine",
]
