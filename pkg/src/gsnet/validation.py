"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_array(value, name: str, shape: tuple | None = None, ndim: int | None = None,
                allow_nonfinite: bool = False) -> np.ndarray:
    """Coerce ``value`` to a float64 array and validate its shape.

    Args:
        value: array-like input.
        name: identifier used in error messages.
        shape: exact shape to enforce; ``None`` entries are wildcards.
        ndim: number of dimensions to enforce when ``shape`` is not given.
        allow_nonfinite: skip the finiteness check.

    Returns:
        A float64 ``np.ndarray`` view or copy of ``value``.
    """
    arr = np.asarray(value, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got {arr.ndim}")
    if shape is not None:
        if arr.ndim != len(shape):
            raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
        for want, got in zip(shape, arr.shape):
            if want is not None and want != got:
                raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not allow_nonfinite and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_square(value, name: str, n: int | None = None) -> np.ndarray:
    """Validate a square 2-D matrix, optionally of size ``n``."""
    arr = check_array(value, name, ndim=2)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} must be {n}x{n}, got shape {arr.shape}")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, name_a: str, name_b: str) -> None:
    if a.shape != b.shape:
        raise ValueError(
            f"{name_a} and {name_b} must have the same shape, "
            f"got {a.shape} and {b.shape}"
        )


def check_in_range(value: float, name: str, low: float, high: float,
                   include_low: bool = True, include_high: bool = False) -> float:
    """Validate a scalar against an interval; returns the value as float."""
    value = float(value)
    ok_low = value >= low if include_low else value > low
    ok_high = value <= high if include_high else value < high
    if not (ok_low and ok_high):
        lo = "[" if include_low else "("
        hi = "]" if include_high else ")"
        raise ValueError(f"{name} must lie in {lo}{low}, {high}{hi}, got {value}")
    return value


def frozen(arr: np.ndarray) -> np.ndarray:
    """Return ``arr`` marked read-only so shared instances stay immutable."""
    arr.flags.writeable = False
    return arr
