"""Unsupervised joint 2x super-resolution and Gibbs-ringing removal for MR images."""

__version__ = "0.1.0"
