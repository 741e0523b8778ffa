"""Mixture-of-experts versus Bayesian model averaging on synthetic polynomial data."""
from moebma.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
