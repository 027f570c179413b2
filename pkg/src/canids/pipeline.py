"""Per-message-id training, calibration, detection and scoring on traces."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from .attacks import AttackSpec, inject_all
from .autoencoder import AutoencoderModel, TrainConfig, TrainReport, init_model, train
from .codec import Trace
from .detector import DEFAULT_METHOD, DetectionResult, calibrate_all, detect_stream
from .evaluation import ConfusionCounts, ScenarioMetrics, confusion

log = logging.getLogger(__name__)


@dataclass
class PreparedData:
    scaler: ds.ScalingParams
    train_batches: list
    val_batches: list


def prepare(values, cfg: TrainConfig) -> PreparedData:
    """Scale, window, split and batch the clean records of one id.

    The scaler is fitted on the records covered by the training windows only.
    """
    values = np.asarray(values, dtype=np.float64)
    n_windows = len(values) - cfg.k + 1
    if n_windows < 2:
        raise ValueError(f"need at least k+1={cfg.k + 1} records, got {len(values)}")
    n_train = math.floor(cfg.val_fraction * n_windows)
    if n_train == 0 or n_train == n_windows:
        raise ValueError("train/validation split leaves an empty partition")
    scaler = ds.fit_scaler(values[: n_train + cfg.k - 1])
    windows = ds.window_array(ds.scale(values, scaler), cfg.k)
    train_w, val_w = ds.split_train_val(windows, cfg.val_fraction)
    return PreparedData(scaler, ds.make_batches(train_w, cfg.batch_size), ds.make_batches(val_w, cfg.batch_size))


def id_values(trace: Trace, message_id: int) -> np.ndarray:
    return np.array([r.values for r in trace.for_id(message_id)], dtype=np.float64)


def train_message_model(values, cfg: TrainConfig, message_id: int | None = None,
                        progress=None) -> tuple[AutoencoderModel, TrainReport]:
    data = prepare(values, cfg)
    n_features = np.asarray(values).shape[1]
    model = init_model(cfg.variant, n_features, cfg.hidden_dim, cfg.seed)
    best, report = train(model, data.train_batches, data.val_batches, cfg, progress=progress)
    best.scaler = data.scaler
    best.message_id = message_id
    return best, report


def train_trace(trace: Trace, cfg: TrainConfig, progress=None) -> dict[int, tuple[AutoencoderModel, TrainReport]]:
    """One model per message id; refuses traces holding attack labels."""
    if any(r.label == 1 for r in trace.records):
        raise ValueError("training trace contains malicious (label 1) records")
    out = {}
    for mid in trace.ids():
        values = id_values(trace, mid)
        log.info("training id%d on %d records (%s)", mid, len(values), cfg.variant)
        cb = (lambda e, a, b, _m=mid: progress(_m, e, a, b)) if progress else None
        out[mid] = train_message_model(values, cfg, mid, progress=cb)
    return out


def calibrate_model(model: AutoencoderModel, report: TrainReport, method: str = DEFAULT_METHOD) -> dict:
    """Store the chosen threshold on the model; return all candidates."""
    candidates = calibrate_all(report.best_val_losses)
    model.threshold = candidates[method].to_dict()
    return {m: t.to_dict() for m, t in candidates.items()}


@dataclass
class TraceDetection:
    """Detection results aligned with the records of a trace."""

    trace: Trace
    results: list[DetectionResult]

    @property
    def flags(self) -> list[bool]:
        return [r.flag for r in self.results]

    @property
    def labels(self) -> list[int]:
        return [0 if r.label is None else r.label for r in self.trace.records]


def detect_trace(models: dict[int, AutoencoderModel], trace: Trace, k: int,
                 thresholds: dict[int, float] | None = None) -> TraceDetection:
    """Run an independent detector per id and re-assemble in trace order.

    ``thresholds`` overrides the thresholds stored on the models.
    """
    positions: dict[int, list[int]] = {}
    for i, r in enumerate(trace.records):
        positions.setdefault(r.message_id, []).append(i)
    results: list[DetectionResult | None] = [None] * len(trace.records)
    for mid, pos in positions.items():
        model = models.get(mid)
        if model is None:
            raise KeyError(f"no model for message id{mid}")
        if thresholds is not None:
            limit = thresholds[mid]
        elif model.threshold is not None:
            limit = model.threshold["value"]
        else:
            raise ValueError(f"model for id{mid} has no calibrated threshold")
        per_id = detect_stream(model, limit, [trace.records[i] for i in pos], k)
        for i, res in zip(pos, per_id):
            results[i] = res
    return TraceDetection(trace, results)


def score(detection: TraceDetection, scenario: str) -> ScenarioMetrics:
    counts = confusion(detection.labels, detection.flags)
    return ScenarioMetrics.from_counts(scenario, counts)


def counts_for_id(detection: TraceDetection, message_id: int) -> ConfusionCounts:
    keep = [i for i, r in enumerate(detection.trace.records) if r.message_id == message_id]
    return confusion([detection.labels[i] for i in keep], [detection.flags[i] for i in keep])


def build_scenarios(clean: Trace, specs: list[AttackSpec]) -> dict[str, Trace]:
    """``normal`` (the clean trace, labels 0) plus one labeled trace per
    scenario name; specs sharing a name are injected into the same trace."""
    normal = inject_labels_zero(clean)
    groups: dict[str, list[AttackSpec]] = {}
    for spec in specs:
        groups.setdefault(spec.label(), []).append(spec)
    if "normal" in groups:
        raise ValueError("'normal' is reserved for the attack-free scenario")
    out = {"normal": normal}
    for name, group in groups.items():
        out[name] = inject_all(normal, group)
    return out


def inject_labels_zero(trace: Trace) -> Trace:
    from dataclasses import replace
    return Trace([replace(r, label=0) for r in trace.records], dict(trace.schema))
