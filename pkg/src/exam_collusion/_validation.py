"""Exceptions and input checks shared by the estimators and the CLI."""

from __future__ import annotations

import math

import numpy as np


class InputError(ValueError):
    """Bad user input: malformed files, inconsistent cohorts, invalid matrices."""


class InvariantError(RuntimeError):
    """An internal consistency check failed. Always a bug, never bad input."""


def check_finite(value, what):
    if isinstance(value, (float, int)):
        if not math.isfinite(value):
            raise InputError(f"{what} must be finite, got {value!r}")
        return float(value)
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{what} contains NaN or infinite values")
    return arr


def check_square_dissimilarity(values, *, atol=1e-12):
    """Validate a dense pairwise dissimilarity matrix and return it as float64.

    The matrix must be square, finite, symmetric, non-negative and have a
    zero diagonal.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InputError(f"dissimilarity matrix must be square, got shape {arr.shape}")
    check_finite(arr, "dissimilarity matrix")
    if np.any(arr < 0):
        raise InputError("dissimilarity matrix has negative entries")
    if not np.allclose(arr, arr.T, rtol=0.0, atol=atol):
        raise InputError("dissimilarity matrix is not symmetric")
    if np.any(np.abs(np.diag(arr)) > atol):
        raise InputError("dissimilarity matrix has a non-zero diagonal")
    return arr


def check_choice(value, options, name):
    if value not in options:
        raise InputError(f"{name} must be one of {sorted(options)}, got {value!r}")
    return value


def upper_triangle(values):
    """Strict upper triangle in row-major (i < j) order."""
    arr = np.asarray(values)
    iu = np.triu_indices(arr.shape[0], k=1)
    return arr[iu]
