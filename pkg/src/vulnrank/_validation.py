"""Input validation helpers shared by the estimators and pipeline stages."""

import numpy as np

from .errors import ContractViolation


def as_float_matrix(X, name="X"):
    """Coerce to a 2-D float64 array without checking finiteness."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    return arr


def check_finite_rows(X, name="X"):
    """Raise naming the first offending row if any entry is NaN/inf."""
    bad = ~np.isfinite(X)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise ContractViolation(f"non-finite value in {name} at row {row}")
    return X


def check_binary_labels(y, name="y"):
    arr = np.asarray(y)
    values = np.unique(arr)
    if not np.isin(values, (0, 1)).all():
        raise ContractViolation(f"{name} must contain only 0/1 labels, got {values!r}")
    return arr.astype(np.int64)


def check_feature_width(expected, X, name="X"):
    if X.shape[1] != expected:
        raise ContractViolation(
            f"{name} has {X.shape[1]} features, model expects {expected}"
        )
    return X


def check_same_length(a, b, names=("a", "b")):
    if len(a) != len(b):
        raise ContractViolation(
            f"{names[0]} and {names[1]} must have equal length ({len(a)} != {len(b)})"
        )
