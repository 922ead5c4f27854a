"""Explainable meta-learning: a boosted-tree surrogate over meta-features
and hyperparameters, plus model-agnostic tools to interrogate it."""

__version__ = "0.1.0"
