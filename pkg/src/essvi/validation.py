"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_positive(name: str, value: float) -> float:
    """Raise ValueError unless ``value`` is a finite strictly positive number."""
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_non_negative(name: str, value: float) -> float:
    """Raise ValueError unless ``value`` is finite and >= 0."""
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise ValueError(f"{name} must be non-negative and finite, got {value}")
    return value


def check_open_interval(name: str, value: float, lo: float, hi: float) -> float:
    """Raise ValueError unless ``lo < value < hi``."""
    value = float(value)
    if not (lo < value < hi):
        raise ValueError(f"{name} must lie in ]{lo}, {hi}[, got {value}")
    return value


def check_choice(name: str, value: str, choices: tuple[str, ...]) -> str:
    """Raise ValueError unless ``value`` is one of ``choices``."""
    if value not in choices:
        raise ValueError(f"{name} must be one of {choices}, got {value!r}")
    return value


def check_strictly_increasing(name: str, values) -> np.ndarray:
    """Raise ValueError unless ``values`` is a strictly increasing 1-d sequence."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if arr.size > 1 and not np.all(np.diff(arr) > 0):
        raise ValueError(f"{name} must be strictly increasing, got {arr.tolist()}")
    return arr


def as_readonly(values, dtype=float) -> np.ndarray:
    """Copy ``values`` into a read-only float array."""
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr
