"""Prediction-enhanced Monte Carlo: learned control variates with cheap feature marginals."""

__version__ = "0.1.0"
