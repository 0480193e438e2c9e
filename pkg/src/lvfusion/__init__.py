"""LiDAR and camera object fusion, CIPV selection and adaptive cruise control."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
