"""tracklearn: learned motion models for single-target Bayesian tracking."""

__version__ = "0.1.0"
