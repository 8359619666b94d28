"""privaudit: empirical privacy leakage measurement for small tabular models."""

__version__ = "0.1.0"
