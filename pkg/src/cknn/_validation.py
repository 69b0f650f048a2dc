"""Input checks in the spirit of ``sklearn.utils.validation``.

These raise :class:`InvalidInputError` (a ``ValueError``) so callers composing
estimators in sklearn pipelines see the exception type they expect.
"""

import numbers

import numpy as np

from .exceptions import InvalidInputError


def check_matrix(X, name="X", n_features=None, min_rows=0):
    """Return ``X`` as a finite 2-D float64 array."""
    try:
        X = np.asarray(X, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} is not numeric: {exc}") from None
    if X.ndim == 1 and n_features is not None and X.shape[0] == n_features and min_rows <= 1:
        X = X.reshape(1, -1)
    if X.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {X.shape}")
    if n_features is not None and X.shape[1] != n_features:
        raise InvalidInputError(f"{name} has {X.shape[1]} features, expected {n_features}")
    if X.shape[0] < min_rows:
        raise InvalidInputError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    if not np.isfinite(X).all():
        raise InvalidInputError(f"{name} contains NaN or infinite values")
    return X


def check_vector(x, name="x", size=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {x.shape}")
    if size is not None and x.shape[0] != size:
        raise InvalidInputError(f"{name} has length {x.shape[0]}, expected {size}")
    if not np.isfinite(x).all():
        raise InvalidInputError(f"{name} contains NaN or infinite values")
    return x


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < 1:
        raise InvalidInputError(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_percent(value, name, allow_zero=False):
    lo_ok = value >= 0 if allow_zero else value > 0
    if not (lo_ok and value <= 100):
        interval = "[0, 100]" if allow_zero else "(0, 100]"
        raise InvalidInputError(f"{name} must lie in {interval}, got {value!r}")
    return float(value)
