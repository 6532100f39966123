"""Desk-scale simulator for model-heterogeneous personalized federated learning."""

__version__ = "1.0.0"
