"""Bucket classification of scalar time series with a transformer encoder.

The package trains an attention-based classifier to predict which
empirical-quantile bucket the next observation (or its square) of a
scalar series falls into, and benchmarks it against the exact
conditional distribution available for simulated mean-reverting data.
All numerics run on float64 numpy arrays; gradients come from the
small reverse-mode engine in :mod:`bucketformer.autodiff`.
"""

__version__ = "0.1.0"
