"""Per-signal min-max scaling, rolling windows and mini-batches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ScalingParams:
    mins: tuple[float, ...]
    maxs: tuple[float, ...]

    def __post_init__(self):
        if len(self.mins) != len(self.maxs):
            raise ValueError("mins and maxs must have equal length")
        if any(lo > hi for lo, hi in zip(self.mins, self.maxs)):
            raise ValueError("min must not exceed max")

    @property
    def n_signals(self) -> int:
        return len(self.mins)

    def to_dict(self) -> dict:
        return {"mins": list(self.mins), "maxs": list(self.maxs)}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingParams":
        return cls(tuple(float(v) for v in d["mins"]), tuple(float(v) for v in d["maxs"]))


@dataclass(frozen=True)
class Subsequence:
    data: np.ndarray  # (k, f)
    end_index: int    # index of the last record in the source sequence

    @property
    def k(self) -> int:
        return self.data.shape[0]


def _as_matrix(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError("expected a (records, signals) matrix")
    return arr


def fit_scaler(train_values) -> ScalingParams:
    """Fit per-signal extrema on the training slice only.

    ``train_values`` is an (n, f) array or a sequence of records/vectors.
    """
    if len(train_values) == 0:
        raise ValueError("cannot fit a scaler on zero records")
    first = train_values[0]
    if hasattr(first, "values") and not isinstance(first, np.ndarray):
        train_values = [r.values for r in train_values]
    arr = _as_matrix(train_values)
    return ScalingParams(tuple(arr.min(axis=0).tolist()), tuple(arr.max(axis=0).tolist()))


def scale(values, params: ScalingParams) -> np.ndarray:
    """Map values into [0, 1]; constant signals map to 0 and outliers clamp."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape[-1] != params.n_signals:
        raise ValueError(f"expected {params.n_signals} signals, got {arr.shape[-1]}")
    lo = np.asarray(params.mins)
    span = np.asarray(params.maxs) - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (arr - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


def unscale(scaled, params: ScalingParams) -> np.ndarray:
    arr = np.asarray(scaled, dtype=np.float64)
    lo = np.asarray(params.mins)
    return arr * (np.asarray(params.maxs) - lo) + lo


def window_array(scaled, k: int) -> np.ndarray:
    """All stride-1 windows of ``scaled`` as an (n-k+1, k, f) array."""
    arr = _as_matrix(scaled)
    n = arr.shape[0]
    if k < 1:
        raise ValueError("subsequence size must be >= 1")
    if n < k:
        raise ValueError(f"need at least k={k} records, got {n}")
    view = np.lib.stride_tricks.sliding_window_view(arr, k, axis=0)  # (n-k+1, f, k)
    return np.ascontiguousarray(view.transpose(0, 2, 1))


def make_subsequences(scaled, k: int) -> list[Subsequence]:
    windows = window_array(scaled, k)
    return [Subsequence(w, i + k - 1) for i, w in enumerate(windows)]


def split_train_val(subsequences: Sequence, fraction: float = 0.85):
    """Chronological split: the first floor(fraction*n) items train."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    n = len(subsequences)
    if n == 0:
        raise ValueError("nothing to split")
    cut = math.floor(fraction * n)
    train, val = subsequences[:cut], subsequences[cut:]
    if len(train) == 0 or len(val) == 0:
        raise ValueError(f"split of {n} subsequences at {fraction} leaves an empty partition")
    return train, val


def make_batches(subsequences: Sequence, batch_size: int) -> list[np.ndarray]:
    """Consecutive groups of subsequences stacked into (b, k, f) arrays."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(subsequences, np.ndarray):
        data = subsequences
    else:
        data = np.stack([s.data if isinstance(s, Subsequence) else np.asarray(s) for s in subsequences]) \
            if len(subsequences) else np.empty((0,))
    return [data[i:i + batch_size] for i in range(0, len(data), batch_size)]
