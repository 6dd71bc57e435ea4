"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

__all__ = ["check_vector", "check_in_unit_interval", "check_k_grid", "check_fraction"]


def check_vector(name: str, value, n: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    if n is not None and arr.size != n:
        raise ValueError(f"{name} has length {arr.size}, expected {n}")
    return arr


def check_in_unit_interval(name: str, arr: np.ndarray) -> np.ndarray:
    if np.any((arr < 0.0) | (arr > 1.0)):
        raise ValueError(f"{name} must lie in [0, 1]")
    return arr


def check_k_grid(k_grid) -> tuple[int, ...]:
    ks = [int(k) for k in k_grid]
    if not ks:
        raise ValueError("k_grid is empty")
    if ks != sorted(set(ks)):
        raise ValueError("k_grid must be strictly ascending")
    if ks[0] < 0:
        raise ValueError("k values must be nonnegative")
    for k in ks:
        if k > 0 and (k & (k - 1)) != 0:
            raise ValueError(f"k={k} is not a power of two")
    return tuple(ks)


def check_fraction(name: str, value: float, open_zero: bool = True) -> float:
    value = float(value)
    lo_ok = value > 0.0 if open_zero else value >= 0.0
    if not (lo_ok and value < 1.0):
        raise ValueError(f"{name} must lie in (0, 1), got {value}")
    return value
