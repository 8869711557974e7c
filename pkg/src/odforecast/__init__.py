"""Age-structured overdose mortality forecasting with ensemble Kalman data assimilation."""

__version__ = "0.1.0"
