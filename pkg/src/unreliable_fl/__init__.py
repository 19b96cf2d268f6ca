"""Federated learning with unreliable clients: corruption model, convergence
bound analytics, filtering aggregation and an experiment harness."""

__version__ = "0.1.0"
