"""Frequency-decoupled reconstruction GAN for unsupervised anomaly detection."""

__version__ = "0.1.0"
