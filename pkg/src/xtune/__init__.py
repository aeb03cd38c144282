"""Accurate matrix products, IC-preconditioned CG, and explainable auto-tuning."""

__version__ = "0.1.0"
