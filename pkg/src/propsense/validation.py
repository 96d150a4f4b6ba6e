"""Input validation helpers used at public API boundaries."""

import numpy as np

from .errors import ValidationError


def as_float_array(x, name: str, shape=None) -> np.ndarray:
    """Coerce to a float64 array, checking finiteness and (optionally) shape."""
    arr = np.asarray(x, dtype=np.float64)
    if shape is not None and arr.shape != tuple(shape):
        raise ValidationError(f"{name}: expected shape {tuple(shape)}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def as_points(x, name: str = "points") -> np.ndarray:
    """Coerce to an (N, 3) float64 array of finite coordinates."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValidationError(f"{name}: expected an (N, 3) array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: contains non-finite values")
    return arr


def as_vector3(x, name: str = "vector") -> np.ndarray:
    return as_float_array(x, name, shape=(3,))


def as_index_array(x, n: int, name: str, unique: bool = False) -> np.ndarray:
    """Coerce to an int index array with all entries in [0, n)."""
    arr = np.asarray(x, dtype=np.intp)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        bad = arr[(arr < 0) | (arr >= n)][0]
        raise ValidationError(f"{name}: index {bad} out of range [0, {n})")
    if unique and arr.size != np.unique(arr).size:
        raise ValidationError(f"{name}: indices must be unique")
    return arr


def check_unit_quaternion(q, tol: float = 1e-9, name: str = "quaternion") -> np.ndarray:
    q = as_float_array(q, name, shape=(4,))
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > tol:
        raise ValidationError(f"{name}: norm {norm!r} is not 1 within {tol}")
    return q
