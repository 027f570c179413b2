"""Intrusion scores, threshold calibration and per-id streaming detection."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .autoencoder import AutoencoderModel, forward
from .dataset import ScalingParams, scale, window_array

# Candidate thresholds, ordered from the lowest percentile upwards.  ``max``
# is nearest-rank p100.
PERCENTILES: dict[str, Fraction] = {
    "p90": Fraction(90, 100),
    "p99": Fraction(99, 100),
    "p99_9": Fraction(999, 1000),
    "p99_99": Fraction(9999, 10000),
}
THRESHOLD_METHODS = ("max", "mean", "median", "p99_99", "p99_9", "p99", "p90")
SWEEP_ORDER = ("p90", "p99", "p99_9", "p99_99", "max")
DEFAULT_METHOD = "p99_9"


@dataclass(frozen=True)
class IntrusionThreshold:
    value: float
    method: str
    sample_count: int

    def to_dict(self) -> dict:
        return {"value": self.value, "method": self.method, "sample_count": self.sample_count}

    @classmethod
    def from_dict(cls, d: dict) -> "IntrusionThreshold":
        return cls(float(d["value"]), d["method"], int(d["sample_count"]))


@dataclass(frozen=True)
class DetectionResult:
    index: int
    timestamp: float | None
    scores: tuple[float, ...] | None
    message_score: float | None
    flag: bool
    argmax: int | None
    warmup: bool = False


def intrusion_scores(actual, reconstructed) -> np.ndarray:
    """Per-signal squared error between scaled input and reconstruction."""
    s = np.asarray(actual, dtype=np.float64)
    s_hat = np.asarray(reconstructed, dtype=np.float64)
    if s.shape != s_hat.shape:
        raise ValueError(f"length mismatch: {s.shape} vs {s_hat.shape}")
    return (s - s_hat) ** 2


def message_score(scores) -> tuple[float, int]:
    """(max score, index of its first occurrence)."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty score vector")
    i = int(np.argmax(arr))  # argmax returns the first maximum
    return float(arr[i]), i


def nearest_rank(sorted_values: Sequence[float], q: Fraction) -> float:
    n = len(sorted_values)
    rank = min(max(math.ceil(q * n), 1), n)
    return float(sorted_values[rank - 1])


def exact_mean(values: np.ndarray) -> float:
    """Mean rounded once from the exact rational sum.

    Float denominators are powers of two, so every value is rescaled to the
    largest one and summed as integers.
    """
    ratios = [v.as_integer_ratio() for v in values.tolist()]
    den = max(d for _, d in ratios)
    num = sum(n * (den // d) for n, d in ratios)
    return float(Fraction(num, den * len(ratios)))


def calibrate_threshold(losses, method: str = DEFAULT_METHOD) -> IntrusionThreshold:
    """Threshold from the best model's per-subsequence validation losses."""
    arr = np.asarray(losses, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("empty validation loss population")
    if method not in THRESHOLD_METHODS:
        raise ValueError(f"unknown threshold method {method!r}")
    if method == "max":
        value = float(arr.max())
    elif method == "mean":
        value = exact_mean(arr)
    else:
        ordered = np.sort(arr)
        q = Fraction(1, 2) if method == "median" else PERCENTILES[method]
        value = nearest_rank(ordered, q)
    return IntrusionThreshold(value, method, int(arr.size))


def calibrate_all(losses) -> dict[str, IntrusionThreshold]:
    return {m: calibrate_threshold(losses, m) for m in THRESHOLD_METHODS}


def _threshold_value(threshold) -> float:
    if isinstance(threshold, IntrusionThreshold):
        return threshold.value
    return float(threshold)


def newest_step_scores(model: AutoencoderModel, windows: np.ndarray, chunk: int = 1024) -> np.ndarray:
    """Squared error at the last time step of each (k, f) window."""
    out = np.empty((len(windows), model.n_features))
    for i in range(0, len(windows), chunk):
        w = windows[i:i + chunk]
        recon, _ = forward(model, w)
        out[i:i + len(w)] = intrusion_scores(w[:, -1], recon[:, -1])
    return out


def _record_values(records) -> tuple[np.ndarray, list]:
    if len(records) and hasattr(records[0], "values") and not isinstance(records, np.ndarray):
        return np.array([r.values for r in records], dtype=np.float64), [r.timestamp for r in records]
    arr = np.asarray(records, dtype=np.float64)
    return arr, [None] * len(arr)


def detect_stream(model: AutoencoderModel, threshold, records, k: int,
                  scaler: ScalingParams | None = None) -> list[DetectionResult]:
    """Score every record of one message id.

    ``records`` are SignalRecords (or raw value rows) in arrival order.  Each
    record from the k-th onward is judged on the window ending at it; the
    first k-1 are emitted unflagged as warm-up.  Equivalent to feeding a
    :class:`StreamingDetector` one record at a time.
    """
    scaler = scaler or model.scaler
    if scaler is None:
        raise ValueError("model has no fitted scaler")
    values, stamps = _record_values(records)
    if values.ndim != 2 or values.shape[1] != model.n_features:
        raise ValueError(f"records must carry {model.n_features} signal values")
    limit = _threshold_value(threshold)
    results = [DetectionResult(i, stamps[i], None, None, False, None, True)
               for i in range(min(k - 1, len(values)))]
    if len(values) < k:
        return results
    scores = newest_step_scores(model, window_array(scale(values, scaler), k))
    for j, row in enumerate(scores):
        i = j + k - 1
        mis, arg = message_score(row)
        results.append(DetectionResult(i, stamps[i], tuple(row.tolist()), mis, mis > limit, arg))
    return results


class StreamingDetector:
    """Stateful per-id detector holding the last k scaled records."""

    def __init__(self, model: AutoencoderModel, threshold, k: int, scaler: ScalingParams | None = None):
        self.model = model
        self.scaler = scaler or model.scaler
        if self.scaler is None:
            raise ValueError("model has no fitted scaler")
        self.k = k
        self.limit = _threshold_value(threshold)
        self._window: deque = deque(maxlen=k)
        self._count = 0

    def push(self, record) -> DetectionResult:
        values = record.values if hasattr(record, "values") else record
        ts = getattr(record, "timestamp", None)
        if len(values) != self.model.n_features:
            raise ValueError(f"expected {self.model.n_features} signal values, got {len(values)}")
        self._window.append(scale(values, self.scaler))
        i = self._count
        self._count += 1
        if len(self._window) < self.k:
            return DetectionResult(i, ts, None, None, False, None, True)
        w = np.array(self._window)[None]
        row = newest_step_scores(self.model, w)[0]
        mis, arg = message_score(row)
        return DetectionResult(i, ts, tuple(row.tolist()), mis, mis > self.limit, arg)

    def run(self, records: Iterable) -> list[DetectionResult]:
        return [self.push(r) for r in records]
