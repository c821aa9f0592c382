"""Extended state observers with an artificial-delay disturbance model."""

from .kernels import BACKEND

__version__ = "0.1.0"
