"""Federated Q-learning with attention-driven machine unlearning."""

__version__ = "0.1.0"
