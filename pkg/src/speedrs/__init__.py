"""Distribution regression on stochastic processes via signature kernels."""
from ._backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND"]
