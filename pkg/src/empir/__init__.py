"""Ensembles of mixed-precision networks for adversarial robustness."""

__version__ = "0.1.0"
