"""Local-time moments, tail probabilities and tour bounds for self-similar Gaussian fields."""

__version__ = "0.1.0"
