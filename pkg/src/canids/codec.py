"""CAN payload signal codec and SynCAN-style trace files.

Signals are bit fields inside a fixed 8-byte payload.  Little-endian (Intel)
signals count ``start_bit`` from the LSB of byte 0 upwards.  Big-endian
(Motorola) signals use the DBC sawtooth numbering: ``start_bit`` names the
MSB of the field, bit 7 of each byte is its most significant bit, and the
field continues into the following byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

PAYLOAD_BYTES = 8
PAYLOAD_BITS = 64
MAX_CAN_ID = (1 << 29) - 1

LITTLE_ENDIAN = "little_endian"
BIG_ENDIAN = "big_endian"
SIGNED = "signed"
UNSIGNED = "unsigned"


class CodecError(ValueError):
    """Base class for codec failures."""


class MalformedDefinitionError(CodecError):
    pass


class SignalRangeError(CodecError):
    pass


class TraceParseError(CodecError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(CodecError):
    pass


@dataclass(frozen=True)
class SignalDef:
    name: str
    start_bit: int
    length_bits: int
    byte_order: str = LITTLE_ENDIAN
    value_type: str = UNSIGNED

    def __post_init__(self):
        if self.byte_order not in (LITTLE_ENDIAN, BIG_ENDIAN):
            raise MalformedDefinitionError(f"{self.name}: unknown byte order {self.byte_order!r}")
        if self.value_type not in (SIGNED, UNSIGNED):
            raise MalformedDefinitionError(f"{self.name}: unknown value type {self.value_type!r}")
        if not 1 <= self.length_bits <= PAYLOAD_BITS:
            raise MalformedDefinitionError(f"{self.name}: length_bits must be in 1..64")
        if not 0 <= self.start_bit < PAYLOAD_BITS:
            raise MalformedDefinitionError(f"{self.name}: start_bit must be in 0..63")
        if self._stream_offset() + self.length_bits > PAYLOAD_BITS:
            raise MalformedDefinitionError(f"{self.name}: layout exceeds 64 bits")

    def _stream_offset(self) -> int:
        # Little-endian: offset from the LSB of the payload read as a
        # little-endian integer.  Big-endian: offset of the MSB from the start
        # of the payload read as a big-endian bit stream.
        if self.byte_order == LITTLE_ENDIAN:
            return self.start_bit
        return (self.start_bit // 8) * 8 + (7 - self.start_bit % 8)

    def value_range(self) -> tuple[int, int]:
        if self.value_type == SIGNED:
            half = 1 << (self.length_bits - 1)
            return -half, half - 1
        return 0, (1 << self.length_bits) - 1

    def bit_positions(self) -> frozenset[tuple[int, int]]:
        """Physical (byte, bit-in-byte) positions covered by this signal."""
        off = self._stream_offset()
        if self.byte_order == LITTLE_ENDIAN:
            return frozenset(((off + i) // 8, (off + i) % 8) for i in range(self.length_bits))
        return frozenset(((off + i) // 8, 7 - (off + i) % 8) for i in range(self.length_bits))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "start_bit": self.start_bit,
            "length_bits": self.length_bits,
            "byte_order": self.byte_order,
            "value_type": self.value_type,
        }


@dataclass(frozen=True)
class MessageDef:
    id: int
    signals: tuple[SignalDef, ...]
    period_ms: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "signals", tuple(self.signals))
        if not 0 <= self.id <= MAX_CAN_ID:
            raise MalformedDefinitionError(f"message id {self.id} does not fit in 29 bits")
        names = [s.name for s in self.signals]
        if len(set(names)) != len(names):
            raise MalformedDefinitionError(f"id{self.id}: duplicate signal names")
        seen: set[tuple[int, int]] = set()
        for sig in self.signals:
            bits = sig.bit_positions()
            if seen & bits:
                raise MalformedDefinitionError(f"id{self.id}: signal {sig.name} overlaps another signal")
            seen |= bits

    @property
    def n_signals(self) -> int:
        return len(self.signals)

    def to_dict(self) -> dict:
        out = {"id": self.id, "signals": [s.to_dict() for s in self.signals]}
        if self.period_ms is not None:
            out["period_ms"] = self.period_ms
        return out


@dataclass(frozen=True)
class CanFrame:
    id: int
    payload: bytes

    def __post_init__(self):
        if len(self.payload) != PAYLOAD_BYTES:
            raise CodecError(f"payload must be exactly 8 bytes, got {len(self.payload)}")


def extract_signals(frame: CanFrame | bytes, msg: MessageDef) -> list[int]:
    """Raw integer value of every signal in ``msg``, in definition order."""
    payload = frame.payload if isinstance(frame, CanFrame) else bytes(frame)
    if len(payload) != PAYLOAD_BYTES:
        raise CodecError("payload must be exactly 8 bytes")
    le = int.from_bytes(payload, "little")
    be = int.from_bytes(payload, "big")
    out = []
    for sig in msg.signals:
        mask = (1 << sig.length_bits) - 1
        off = sig._stream_offset()
        if sig.byte_order == LITTLE_ENDIAN:
            raw = (le >> off) & mask
        else:
            raw = (be >> (PAYLOAD_BITS - off - sig.length_bits)) & mask
        if sig.value_type == SIGNED and raw >> (sig.length_bits - 1):
            raw -= 1 << sig.length_bits
        out.append(raw)
    return out


def pack_signals(raw_values: Sequence[int], msg: MessageDef) -> bytes:
    """Inverse of :func:`extract_signals`; undefined bits are left zero."""
    if len(raw_values) != msg.n_signals:
        raise CodecError(f"expected {msg.n_signals} values, got {len(raw_values)}")
    le = 0
    be = 0
    for sig, value in zip(msg.signals, raw_values):
        if isinstance(value, float):
            if not value.is_integer():
                raise SignalRangeError(f"{sig.name}: raw value {value} is not an integer")
            value = int(value)
        lo, hi = sig.value_range()
        if not lo <= value <= hi:
            raise SignalRangeError(f"{sig.name}: value {value} outside [{lo}, {hi}]")
        bits = value & ((1 << sig.length_bits) - 1)
        off = sig._stream_offset()
        if sig.byte_order == LITTLE_ENDIAN:
            le |= bits << off
        else:
            be |= bits << (PAYLOAD_BITS - off - sig.length_bits)
    merged = bytes(a | b for a, b in zip(le.to_bytes(8, "little"), be.to_bytes(8, "big")))
    return merged


def encode_frame(msg: MessageDef, raw_values: Sequence[int]) -> CanFrame:
    return CanFrame(msg.id, pack_signals(raw_values, msg))


# --------------------------------------------------------------------------
# Traces


@dataclass
class SignalRecord:
    timestamp: float
    message_id: int
    values: tuple[float, ...]
    label: int | None = None

    def __post_init__(self):
        self.values = tuple(float(v) for v in self.values)
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class Trace:
    records: list[SignalRecord]
    schema: dict[int, MessageDef] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        prev = -math.inf
        for i, rec in enumerate(self.records):
            if rec.timestamp < prev:
                raise ValueError(f"record {i}: timestamps must be non-decreasing")
            prev = rec.timestamp
            msg = self.schema.get(rec.message_id)
            if msg is None:
                raise SchemaError(f"record {i}: unknown message id{rec.message_id}")
            if len(rec.values) != msg.n_signals:
                raise SchemaError(
                    f"record {i}: id{rec.message_id} expects {msg.n_signals} signals, got {len(rec.values)}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def for_id(self, message_id: int) -> list[SignalRecord]:
        return [r for r in self.records if r.message_id == message_id]

    def ids(self) -> list[int]:
        return sorted(self.schema)

    @property
    def has_labels(self) -> bool:
        return any(r.label is not None for r in self.records)


def load_schema(source: str | TextIO | dict) -> dict[int, MessageDef]:
    """Read the JSON schema document (path, open file, or parsed dict)."""
    if isinstance(source, dict):
        doc = source
    elif isinstance(source, str):
        with open(source) as fh:
            doc = json.load(fh)
    else:
        doc = json.load(source)
    try:
        messages = doc["messages"]
        schema = {}
        for m in messages:
            sigs = [SignalDef(**s) for s in m["signals"]]
            md = MessageDef(int(m["id"]), tuple(sigs), m.get("period_ms"))
            if md.id in schema:
                raise SchemaError(f"duplicate message id{md.id}")
            schema[md.id] = md
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema document: {exc}") from exc
    return schema


def schema_to_dict(schema: dict[int, MessageDef]) -> dict:
    return {"messages": [schema[i].to_dict() for i in sorted(schema)]}


def save_schema(schema: dict[int, MessageDef], path: str) -> None:
    with open(path, "w") as fh:
        json.dump(schema_to_dict(schema), fh, indent=2)
        fh.write("\n")


def _parse_id(token: str, line: int) -> int:
    token = token.strip()
    digits = token[2:] if token.lower().startswith("id") else token
    try:
        return int(digits)
    except ValueError:
        raise TraceParseError(f"bad message id {token!r}", line) from None


def parse_trace(stream: TextIO | str, schema: dict[int, MessageDef]) -> Trace:
    """Parse a SynCAN-style CSV (``Label,Time,ID,Signal1..``) into a Trace.

    ``stream`` may be an open text file or a path.
    """
    if isinstance(stream, str):
        with open(stream, newline="") as fh:
            return parse_trace(fh, schema)

    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise TraceParseError("missing header", 1) from None
    cols = [h.strip() for h in header]
    try:
        t_col = cols.index("Time")
        id_col = cols.index("ID")
    except ValueError:
        raise TraceParseError("header must contain Time and ID columns", 1) from None
    label_col = cols.index("Label") if "Label" in cols else None
    sig_cols = [i for i, c in enumerate(cols) if c.startswith("Signal")]

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(cols):
            row = row + [""] * (len(cols) - len(row))
        try:
            ts = float(row[t_col])
        except ValueError:
            raise TraceParseError(f"bad timestamp {row[t_col]!r}", lineno) from None
        mid = _parse_id(row[id_col], lineno)
        msg = schema.get(mid)
        if msg is None:
            raise SchemaError(f"line {lineno}: unknown message id{mid}")
        cells = [row[i].strip() for i in sig_cols]
        if len(cells) < msg.n_signals or any(c == "" for c in cells[: msg.n_signals]):
            raise TraceParseError(f"id{mid} needs {msg.n_signals} signal values", lineno)
        if any(c != "" for c in cells[msg.n_signals:]):
            raise TraceParseError(f"id{mid} has extra signal values", lineno)
        try:
            values = tuple(float(c) for c in cells[: msg.n_signals])
        except ValueError:
            raise TraceParseError("non-numeric signal value", lineno) from None
        label = None
        if label_col is not None:
            tok = row[label_col].strip()
            if tok in ("0", "1"):
                label = int(tok)
            elif tok != "":
                raise TraceParseError(f"bad label {tok!r}", lineno)
        records.append(SignalRecord(ts, mid, values, label))

    # stable sort keeps file order among equal timestamps
    records.sort(key=lambda r: r.timestamp)
    return Trace(records, dict(schema))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trace(trace: Trace, stream: TextIO | str) -> None:
    if isinstance(stream, str):
        with open(stream, "w", newline="") as fh:
            write_trace(trace, fh)
        return
    width = max([4] + [m.n_signals for m in trace.schema.values()])
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["Label", "Time", "ID"] + [f"Signal{i + 1}" for i in range(width)])
    for rec in trace.records:
        vals = [_fmt(v) for v in rec.values]
        vals += [""] * (width - len(vals))
        label = "" if rec.label is None else str(rec.label)
        writer.writerow([label, _fmt(rec.timestamp), f"id{rec.message_id}"] + vals)


def trace_to_string(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace(trace, buf)
    return buf.getvalue()


def merge_records(parts: Iterable[Iterable[SignalRecord]]) -> list[SignalRecord]:
    """Time-sorted merge; ties keep the order of ``parts`` then input order."""
    tagged = []
    for p, part in enumerate(parts):
        for j, rec in enumerate(part):
            tagged.append((rec.timestamp, p, j, rec))
    tagged.sort(key=lambda t: t[:3])
    return [t[3] for t in tagged]
