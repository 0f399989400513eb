"""Desk-scale numerics for burst RAW super-resolution with high-frequency score distillation."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
