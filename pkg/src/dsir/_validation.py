"""Input checks shared by the estimator wrappers and the CLI."""
from __future__ import annotations

import numbers

import numpy as np

from .volume import Volume


def check_volume(x, name: str = "volume", multiple_of: int | None = None) -> np.ndarray:
    """Return ``x`` as a finite float64 (H, W, D) array."""
    arr = x.data if isinstance(x, Volume) else np.asarray(x)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if multiple_of and any(n % multiple_of for n in arr.shape):
        raise ValueError(f"{name} dims {arr.shape} must be multiples of {multiple_of}")
    return arr


def check_volumes(X, name: str = "X", multiple_of: int | None = None) -> tuple[list[np.ndarray], bool]:
    """Accept one volume or a sequence of volumes.

    Returns the list of arrays and whether a single volume was given.
    """
    if isinstance(X, Volume) or (isinstance(X, np.ndarray) and X.ndim == 3):
        return [check_volume(X, name, multiple_of)], True
    items = list(X)
    if not items:
        raise ValueError(f"{name} holds no volumes")
    return [check_volume(x, f"{name}[{i}]", multiple_of) for i, x in enumerate(items)], False


def check_same_dims(a: np.ndarray, b: np.ndarray, names=("fixed", "moving")) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{names[0]} {a.shape} and {names[1]} {b.shape} dims differ")


def check_random_state(seed) -> int:
    if seed is None:
        return 0
    if isinstance(seed, numbers.Integral) and seed >= 0:
        return int(seed)
    raise ValueError(f"random_state must be a non-negative int or None, got {seed!r}")
