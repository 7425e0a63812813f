"""Input validation helpers shared by the estimators and functional API."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


def check_triple(value: int | Sequence[int], name: str, minimum: int = 0) -> tuple[int, int, int]:
    """Coerce ``value`` to a 3-tuple of ints, broadcasting scalars."""
    if np.isscalar(value):
        value = (value,) * 3
    out = tuple(int(v) for v in value)
    if len(out) != 3:
        raise ValueError(f"{name} must have 3 entries, got {len(out)}")
    if any(v < minimum for v in out):
        raise ValueError(f"{name} entries must be >= {minimum}, got {out}")
    return out  # type: ignore[return-value]


def check_finite(array: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(array)):
        raise ValueError(f"{name} contains NaN or Inf")


def check_volume_array(data, name: str = "data", dtype=np.complex128) -> np.ndarray:
    """Return ``data`` as a read-only 3D array of ``dtype``."""
    arr = np.array(data, dtype=dtype, copy=True)
    if arr.ndim != 3:
        raise ValueError(f"{name} must be 3D (z, y, x), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"{name} must have positive dims, got {arr.shape}")
    check_finite(arr, name)
    arr.setflags(write=False)
    return arr


def check_same_dims(a: Iterable[int], b: Iterable[int], what: str = "volumes") -> None:
    a, b = tuple(a), tuple(b)
    if a != b:
        raise ValueError(f"{what} have mismatched dims {a} vs {b}")


def check_positive(value: float, name: str, strict: bool = True) -> float:
    value = float(value)
    if not np.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {value}")
    return value
