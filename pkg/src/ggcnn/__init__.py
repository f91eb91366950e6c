"""Station-level demand forecasting with gated graph convolutions."""

__version__ = "0.1.0"
