"""Attack injection on clean traces: flooding, plateau, continuous, suppress, playback.

Every function takes a trace and an :class:`AttackSpec` and returns a new
trace whose records all carry labels; the input trace is not modified.
Attack windows are half open, ``[start, start + duration)``, in seconds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .codec import SignalRecord, Trace, merge_records

KINDS = ("flooding", "plateau", "continuous", "suppress", "playback")


class AttackError(ValueError):
    pass


@dataclass
class AttackSpec:
    kind: str
    message_id: int
    start: float
    duration: float
    signal: int | None = None
    params: dict = field(default_factory=dict)
    seed: int = 0
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise AttackError(f"unknown attack kind {self.kind!r}")
        if not self.duration > 0:
            raise AttackError("attack duration must be positive")

    @property
    def end(self) -> float:
        return self.start + self.duration

    def label(self) -> str:
        return self.name or self.kind

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        return cls(
            kind=d["kind"],
            message_id=int(d["message_id"]),
            start=float(d["start"]),
            duration=float(d["duration"]),
            signal=d.get("signal"),
            params=dict(d.get("params", {})),
            seed=int(d.get("seed", 0)),
            name=d.get("name"),
        )

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "message_id": self.message_id, "start": self.start,
               "duration": self.duration, "params": self.params, "seed": self.seed}
        if self.signal is not None:
            out["signal"] = self.signal
        if self.name is not None:
            out["name"] = self.name
        return out


def load_attack_specs(path: str) -> list[AttackSpec]:
    with open(path) as fh:
        doc = json.load(fh)
    return [AttackSpec.from_dict(d) for d in doc]


def _clean_copy(trace: Trace) -> list[SignalRecord]:
    return [replace(r, label=0 if r.label is None else r.label) for r in trace.records]


def _check(trace: Trace, spec: AttackSpec, kind: str, needs_signal: bool = False) -> None:
    if spec.kind != kind:
        raise AttackError(f"expected a {kind} spec, got {spec.kind}")
    msg = trace.schema.get(spec.message_id)
    if msg is None:
        raise AttackError(f"message id{spec.message_id} is not in the schema")
    if trace.records and spec.start < trace.records[0].timestamp:
        raise AttackError("attack starts before the trace")
    if needs_signal and (spec.signal is None or not 0 <= spec.signal < msg.n_signals):
        raise AttackError(f"signal index {spec.signal} invalid for id{spec.message_id}")


def _window_indices(records: list[SignalRecord], spec: AttackSpec) -> list[int]:
    idx = [i for i, r in enumerate(records)
           if r.message_id == spec.message_id and spec.start <= r.timestamp < spec.end]
    if not idx:
        raise AttackError(f"no id{spec.message_id} records inside the attack window")
    return idx


def _set_signal(rec: SignalRecord, i: int, value: float) -> SignalRecord:
    vals = list(rec.values)
    vals[i] = float(value)
    return replace(rec, values=tuple(vals), label=1)


def _offset(trace: Trace, spec: AttackSpec, key: str) -> float | None:
    """``params[key]`` as an absolute offset, or ``params[key + '_range']``
    scaled by the signal's observed range over the whole id stream."""
    if key in spec.params:
        return float(spec.params[key])
    if key + "_range" in spec.params:
        lo, hi = observed_ranges(trace, spec.message_id)[spec.signal]
        return float(spec.params[key + "_range"]) * (hi - lo)
    return None


def inject_plateau(trace: Trace, spec: AttackSpec) -> Trace:
    """Hold one signal at a constant.

    ``params`` holds either ``value`` (absolute constant) or ``jump`` (offset
    added to the signal's value at the first attacked record); ``jump_range``
    gives the offset as a fraction of the signal's observed range.
    """
    _check(trace, spec, "plateau", needs_signal=True)
    records = _clean_copy(trace)
    idx = _window_indices(records, spec)
    jump = _offset(trace, spec, "jump")
    if "value" in spec.params:
        const = float(spec.params["value"])
    elif jump is not None:
        const = records[idx[0]].values[spec.signal] + jump
    else:
        raise AttackError("plateau needs params.value, jump or jump_range")
    for i in idx:
        records[i] = _set_signal(records[i], spec.signal, const)
    return Trace(records, dict(trace.schema))


def inject_continuous(trace: Trace, spec: AttackSpec) -> Trace:
    """Linear ramp from the true value at the first attacked record to a target.

    ``params`` holds ``target`` (absolute), ``delta`` (relative to the
    starting value) or ``delta_range`` (delta as a fraction of the range).
    """
    _check(trace, spec, "continuous", needs_signal=True)
    records = _clean_copy(trace)
    idx = _window_indices(records, spec)
    v0 = records[idx[0]].values[spec.signal]
    delta = _offset(trace, spec, "delta")
    if "target" in spec.params:
        target = float(spec.params["target"])
    elif delta is not None:
        target = v0 + delta
    else:
        raise AttackError("continuous needs params.target, delta or delta_range")
    for i in idx:
        frac = (records[i].timestamp - spec.start) / spec.duration
        records[i] = _set_signal(records[i], spec.signal, v0 + (target - v0) * frac)
    return Trace(records, dict(trace.schema))


def inject_suppress(trace: Trace, spec: AttackSpec) -> Trace:
    """Drop every record of the id inside the window.

    The first record of that id after the window is labeled 1 so the gap has
    a ground-truth event.
    """
    _check(trace, spec, "suppress")
    records = _clean_copy(trace)
    drop = set(_window_indices(records, spec))
    after = next((i for i, r in enumerate(records)
                  if r.message_id == spec.message_id and r.timestamp >= spec.end), None)
    if after is None:
        raise AttackError("suppress window leaves no later record to mark the gap")
    records[after] = replace(records[after], label=1)
    kept = [r for i, r in enumerate(records) if i not in drop]
    return Trace(kept, dict(trace.schema))


def inject_playback(trace: Trace, spec: AttackSpec) -> Trace:
    """Replay signal values recorded from ``params.source_start`` onwards.

    Values are copied record for record; timestamps stay those of the window.
    """
    _check(trace, spec, "playback")
    if "source_start" not in spec.params:
        raise AttackError("playback needs params.source_start")
    src_start = float(spec.params["source_start"])
    if src_start > spec.start:
        raise AttackError("replay source must not start after the attack window")
    records = _clean_copy(trace)
    idx = _window_indices(records, spec)
    src_end = src_start + spec.duration
    src = [r.values for r in trace.records
           if r.message_id == spec.message_id and src_start <= r.timestamp < src_end]
    if len(src) < len(idx):
        raise AttackError(f"replay source holds {len(src)} records, window needs {len(idx)}")
    for i, values in zip(idx, src):
        records[i] = replace(records[i], values=values, label=1)
    return Trace(records, dict(trace.schema))


def observed_ranges(trace: Trace, message_id: int) -> list[tuple[float, float]]:
    vals = np.array([r.values for r in trace.for_id(message_id)])
    if vals.size == 0:
        raise AttackError(f"no id{message_id} records to take signal ranges from")
    return list(zip(vals.min(axis=0).tolist(), vals.max(axis=0).tolist()))


def inject_flooding(trace: Trace, spec: AttackSpec) -> Trace:
    """Insert extra records every ``params.period`` seconds inside the window.

    ``params.mode`` is ``"specific"`` (needs ``params.values``) or ``"random"``
    (each signal uniform in ``params.ranges``, defaulting to the ranges
    observed in the trace).
    """
    _check(trace, spec, "flooding")
    period = float(spec.params.get("period", 0.0))
    if not period > 0:
        raise AttackError("flood period must be positive")
    n_sig = trace.schema[spec.message_id].n_signals
    mode = spec.params.get("mode", "random")
    n = math.ceil(spec.duration / period - 1e-9)
    stamps = [spec.start + j * period for j in range(n)]
    if mode == "specific":
        values = [float(v) for v in spec.params["values"]]
        if len(values) != n_sig:
            raise AttackError(f"specific flood payload needs {n_sig} values")
        rows = [values] * n
    elif mode == "random":
        ranges = spec.params.get("ranges") or observed_ranges(trace, spec.message_id)
        lo = np.array([r[0] for r in ranges], dtype=np.float64)
        hi = np.array([r[1] for r in ranges], dtype=np.float64)
        rng = np.random.default_rng(spec.seed)
        rows = (lo + (hi - lo) * rng.random((n, n_sig))).tolist()
    else:
        raise AttackError(f"unknown flood mode {mode!r}")
    inserted = [SignalRecord(t, spec.message_id, tuple(v), 1) for t, v in zip(stamps, rows)]
    return Trace(merge_records([_clean_copy(trace), inserted]), dict(trace.schema))


_INJECTORS = {
    "flooding": inject_flooding,
    "plateau": inject_plateau,
    "continuous": inject_continuous,
    "suppress": inject_suppress,
    "playback": inject_playback,
}


def inject(trace: Trace, spec: AttackSpec) -> Trace:
    return _INJECTORS[spec.kind](trace, spec)


def inject_all(trace: Trace, specs: list[AttackSpec]) -> Trace:
    """Apply several attacks in sequence (labels accumulate)."""
    for spec in specs:
        trace = inject(trace, spec)
    return trace
