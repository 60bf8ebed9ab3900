"""Dual representation learning for out-of-distribution detection."""
from drlood.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
