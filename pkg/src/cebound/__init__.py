"""Contrastive entropy bounds: closed-form Gaussian-mixture costs, conditional
bounds, and the estimators and training loops built on them."""

from . import baselines, bounds, data, gm_algebra, gram, kernels, linalg_ad, losses, nn
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = [
    "BACKEND", "__version__", "baselines", "bounds", "data", "gm_algebra", "gram", "kernels",
    "linalg_ad", "losses", "nn",
]
