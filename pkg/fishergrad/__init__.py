"""Differentiable sampling from Fisher's noncentral multivariate hypergeometric distribution."""

__version__ = "0.1.0"
