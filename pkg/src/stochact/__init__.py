"""Learnable activation zoo, stochastic activation substitution and sum-rule CNN ensembles."""

__version__ = "0.1.0"
