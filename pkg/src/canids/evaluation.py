"""Detection metrics and the IDS utilization/scalability model."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PERIOD_POOL_MS = (1, 5, 10, 15, 20, 25, 30, 45, 50, 100)
DEFAULT_RT_UTILIZATION = 0.50
# Six default {ECUs, messages} sizes; not given numerically in the source study.
DEFAULT_SIZES = ((2, 10), (4, 20), (6, 30), (8, 40), (10, 50), (12, 60))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def to_dict(self) -> dict:
        return {"TP": self.tp, "FN": self.fn, "FP": self.fp, "TN": self.tn}


def confusion(labels: Sequence[int], flags: Sequence[bool]) -> ConfusionCounts:
    lab = np.asarray(labels)
    flg = np.asarray(flags, dtype=bool)
    if lab.shape != flg.shape:
        raise ValueError(f"length mismatch: {lab.shape} labels vs {flg.shape} flags")
    if lab.size and not np.isin(lab, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    pos = lab == 1
    return ConfusionCounts(
        tp=int(np.sum(pos & flg)),
        fn=int(np.sum(pos & ~flg)),
        fp=int(np.sum(~pos & flg)),
        tn=int(np.sum(~pos & ~flg)),
    )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ValueError("accuracy is undefined for zero records")
    return (c.tp + c.tn) / c.total


def false_positive_rate(c: ConfusionCounts) -> float:
    if c.fp + c.tn == 0:
        raise ValueError("false positive rate is undefined without negatives")
    return c.fp / (c.fp + c.tn)


def majority_baseline(c: ConfusionCounts) -> float:
    """Accuracy of always predicting the more frequent label."""
    return max(c.tp + c.fn, c.fp + c.tn) / c.total


@dataclass
class ScenarioMetrics:
    scenario: str
    counts: ConfusionCounts
    detection_accuracy: float
    false_positive_rate: float | None

    @classmethod
    def from_counts(cls, scenario: str, counts: ConfusionCounts) -> "ScenarioMetrics":
        fpr = false_positive_rate(counts) if counts.fp + counts.tn else None
        return cls(scenario, counts, accuracy(counts), fpr)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, **self.counts.to_dict(),
                "accuracy": self.detection_accuracy, "fpr": self.false_positive_rate}


# --------------------------------------------------------------------------
# Utilization


def ids_utilization(t_ids_us: float, period_ms: float) -> float:
    """Share of a core used by monitoring one periodic message."""
    if not t_ids_us > 0 or not period_ms > 0:
        raise ValueError("inference time and period must be positive")
    return t_ids_us / (period_ms * 1000.0)


def ecu_total_utilization(utilizations: Sequence[float]) -> float:
    if len(utilizations) == 0:
        raise ValueError("no per-message utilizations")
    return float(sum(utilizations))


@dataclass(frozen=True)
class SystemSize:
    p: int
    q: int
    rt_utilization: float = DEFAULT_RT_UTILIZATION

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("system size needs p >= 1 ECUs and q >= 1 messages")

    @property
    def label(self) -> str:
        return f"{{{self.p},{self.q}}}"


@dataclass
class EcuLoad:
    ecu_index: int
    periods_ms: list[float]
    u_ids: float
    u_total: float

    @property
    def n_messages(self) -> int:
        return len(self.periods_ms)


@dataclass
class SizeReport:
    size: SystemSize
    ecus: list[EcuLoad]

    @property
    def mean_u_ids(self) -> float:
        return float(np.mean([e.u_ids for e in self.ecus]))

    @property
    def max_u_ids(self) -> float:
        return max(e.u_ids for e in self.ecus)

    @property
    def mean_u_total(self) -> float:
        return float(np.mean([e.u_total for e in self.ecus]))

    @property
    def max_u_total(self) -> float:
        return max(e.u_total for e in self.ecus)

    @property
    def overloaded(self) -> list[int]:
        return [e.ecu_index for e in self.ecus if e.u_total > 1.0]


@dataclass
class UtilizationReport:
    t_ids_us: float
    period_pool_ms: tuple
    seed: int
    rows: list[SizeReport] = field(default_factory=list)

    def csv_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            for e in r.ecus:
                out.append({"size": r.size.label, "ecu_index": e.ecu_index, "n_messages": e.n_messages,
                            "U_IDS": e.u_ids, "U_total": e.u_total})
        return out

    def summary(self) -> list[dict]:
        return [{"size": r.size.label, "p": r.size.p, "q": r.size.q, "mean_U_IDS": r.mean_u_ids,
                 "max_U_IDS": r.max_u_ids, "mean_U_total": r.mean_u_total, "max_U_total": r.max_u_total,
                 "overloaded_ecus": r.overloaded} for r in self.rows]


def scalability_report(sizes: Sequence[SystemSize], t_ids_us: float,
                       period_pool_ms: Sequence[float] = PERIOD_POOL_MS, seed: int = 0) -> UtilizationReport:
    """Per-ECU utilization for each {p, q} system size.

    Periods are drawn uniformly from the pool with a fresh generator per size
    (so a larger q extends the same draw sequence) and messages are dealt to
    ECUs round-robin.
    """
    if len(period_pool_ms) == 0:
        raise ValueError("period pool is empty")
    pool = np.asarray(period_pool_ms, dtype=np.float64)
    report = UtilizationReport(t_ids_us, tuple(period_pool_ms), seed)
    for size in sizes:
        rng = np.random.default_rng(seed)
        periods = pool[rng.integers(0, len(pool), size.q)].tolist()
        per_ecu: list[list[float]] = [[] for _ in range(size.p)]
        for i, per in enumerate(periods):
            per_ecu[i % size.p].append(per)
        ecus = []
        for j, plist in enumerate(per_ecu):
            u = ecu_total_utilization([ids_utilization(t_ids_us, per) for per in plist]) if plist else 0.0
            ecus.append(EcuLoad(j, plist, u, size.rt_utilization + u))
        report.rows.append(SizeReport(size, ecus))
    return report


@dataclass
class InferenceTiming:
    samples_us: list[float]

    @property
    def mean_us(self) -> float:
        return float(np.mean(self.samples_us))

    @property
    def min_us(self) -> float:
        return min(self.samples_us)

    @property
    def max_us(self) -> float:
        return max(self.samples_us)

    def to_dict(self) -> dict:
        return {"samples_us": self.samples_us, "mean_us": self.mean_us,
                "min_us": self.min_us, "max_us": self.max_us, "repetitions": len(self.samples_us)}


def measure_inference_time(model, probe_windows, repetitions: int = 10) -> InferenceTiming:
    """Mean wall-clock forward time per window, one sample per repetition.

    Windows are already scaled; each is run on its own (batch of one), as a
    detector would at runtime.
    """
    from .autoencoder import forward

    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    windows = np.asarray(probe_windows, dtype=np.float64)
    if windows.ndim == 2:
        windows = windows[None]
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for w in windows:
            forward(model, w)
        samples.append((time.perf_counter() - t0) * 1e6 / len(windows))
    return InferenceTiming(samples)
