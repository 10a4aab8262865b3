"""Matrix-variate Gaussian mechanism for differentially private matrix-valued queries."""

__version__ = "0.1.0"
