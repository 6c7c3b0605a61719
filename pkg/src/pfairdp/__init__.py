"""Fair and differentially private training with multi-objective Bayesian optimization."""

__version__ = "0.1.0"
