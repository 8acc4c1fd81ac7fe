"""Likelihood-free inference with adaptive Bayesian-CNN proposal posteriors."""
__version__ = "0.1.0"
