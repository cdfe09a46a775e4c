"""Video tensor primitives.

A video tensor is a plain C-contiguous ``numpy.ndarray`` of shape
``(n, c, t, h, w)`` holding float32 or float64 values. Ops in this package
never mutate their inputs.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import DomainError, ShapeError

DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ChannelSplit(NamedTuple):
    part1: np.ndarray  # first round(alpha * c) channels, the multi-view path
    part2: np.ndarray  # remaining channels, passed through untouched


def check_video(x: np.ndarray, name: str = "x", allow_empty_channels: bool = False) -> np.ndarray:
    if not isinstance(x, np.ndarray):
        raise ShapeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 5:
        raise ShapeError(f"{name} must be 5-D (n, c, t, h, w), got shape {x.shape}")
    if x.dtype not in DTYPES:
        raise ShapeError(f"{name} has unsupported dtype {x.dtype}")
    n, c, t, h, w = x.shape
    if min(n, t, h, w) < 1 or c < (0 if allow_empty_channels else 1):
        raise ShapeError(f"{name} has an empty dimension: {x.shape}")
    return x


def same_dtype(*arrays: np.ndarray) -> np.dtype:
    dtypes = {a.dtype for a in arrays}
    if len(dtypes) != 1:
        raise ShapeError(f"mixed dtypes in one op: {sorted(str(d) for d in dtypes)}")
    return arrays[0].dtype


def split_count(c: int, alpha: float) -> int:
    """Channels routed to the multi-view path: round(alpha * c), ties half up."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    return int(math.floor(alpha * c + 0.5))


def split_channels(x: np.ndarray, alpha: float) -> ChannelSplit:
    check_video(x, allow_empty_channels=True)
    k = split_count(x.shape[1], alpha)
    return ChannelSplit(x[:, :k].copy(), x[:, k:].copy())


def concat_channels(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    check_video(a, "a", allow_empty_channels=True)
    check_video(b, "b", allow_empty_channels=True)
    same_dtype(a, b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1)


def elementwise_add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def scale(a: np.ndarray, s: float) -> np.ndarray:
    return a * a.dtype.type(s)


def relu(a: np.ndarray) -> np.ndarray:
    return np.maximum(a, 0)


def zeros_like(a: np.ndarray) -> np.ndarray:
    return np.zeros_like(a)
