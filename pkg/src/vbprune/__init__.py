"""Variational-Bayes training and spike-and-slab pruning for dense networks."""

__version__ = "0.1.0"
