"""Constrained-perturbation regularization for ill-posed least squares."""

from copra.config import settings

__version__ = settings.VERSION
