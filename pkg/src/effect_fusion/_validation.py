"""Input checks shared by the estimator and the command-line front end."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import DataError


def check_categorical_matrix(X, n_columns: int | None = None) -> np.ndarray:
    """Return ``X`` as a 2-D object array of level labels (as strings)."""
    arr = np.asarray(X, dtype=object)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DataError(f"expected a 2-D array of categorical labels, got {arr.ndim} dimensions")
    if arr.shape[0] == 0:
        raise DataError("no rows")
    if n_columns is not None and arr.shape[1] != n_columns:
        raise DataError(f"expected {n_columns} columns, got {arr.shape[1]}")
    for v in arr.ravel():
        if v is None or (isinstance(v, float) and np.isnan(v)):
            raise DataError("missing categorical labels; drop incomplete rows first")
    return arr


def check_response(y, n_rows: int | None = None) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise DataError("response must be one-dimensional")
    if n_rows is not None and y.shape[0] != n_rows:
        raise DataError(f"response has {y.shape[0]} rows, covariates have {n_rows}")
    if not np.all(np.isfinite(y)):
        raise DataError("response contains non-finite values")
    return y


def check_per_covariate(value, p: int, name: str) -> list:
    """Broadcast a scalar (or ``None``) to ``p`` entries; validate list lengths."""
    if value is None or isinstance(value, (str, int, float)):
        return [value] * p
    value = list(value)
    if len(value) != p:
        raise ValueError(f"{name} needs {p} entries, got {len(value)}")
    return value


def infer_levels(column: Sequence) -> tuple[str, ...]:
    """Sorted distinct labels; numeric labels sort numerically."""
    labels = {_as_label(v) for v in column}
    try:
        return tuple(sorted(labels, key=float))
    except ValueError:
        return tuple(sorted(labels))


def _as_label(v) -> str:
    if isinstance(v, (float, np.floating)) and float(v).is_integer():
        return str(int(v))
    return str(v)
