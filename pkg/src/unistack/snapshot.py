"""Symbolic stack snapshots and their canonical JSON and binary encodings.

A snapshot lists activation records outermost first.  Each record names the
frame's function and resumable point and binds every live value id to its
64-bit value and its location in the source layout.  Local-variable words and
the callee-saved save area travel with the record.
"""
from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

from .regalloc import Loc

MAGIC = b"USNP"
VERSION = 1
_KINDS = ("eqpoint", "callsite")
_LOC_KINDS = ("reg", "slot")


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Binding:
    value: int
    loc: Loc


@dataclass(frozen=True)
class ActivationRecord:
    function: str
    kind: str  # "eqpoint" for the innermost frame, "callsite" otherwise
    point: int
    frame_size: int
    bindings: dict[str, Binding] = field(default_factory=dict)
    locals: dict[tuple[str, int], int] = field(default_factory=dict)  # (local, byte offset) -> word
    saved_callee: dict[int, int] = field(default_factory=dict)  # register -> saved word

    @property
    def key(self) -> tuple[str, str, int]:
        return (self.function, self.kind, self.point)

    def values(self) -> dict[str, int]:
        return {v: b.value for v, b in self.bindings.items()}

    def to_dict(self) -> dict:
        return {
            "function": self.function,
            "kind": self.kind,
            "point": self.point,
            "frame_size": self.frame_size,
            "bindings": [
                {"value": v, "bits": b.value, "kind": b.loc.kind, "loc": b.loc.index}
                for v, b in sorted(self.bindings.items())
            ],
            "locals": [{"local": n, "offset": o, "bits": w} for (n, o), w in sorted(self.locals.items())],
            "saved_callee": [{"reg": r, "bits": w} for r, w in sorted(self.saved_callee.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ActivationRecord":
        return cls(
            d["function"], d["kind"], d["point"], d["frame_size"],
            {b["value"]: Binding(b["bits"], Loc(b["kind"], b["loc"])) for b in d["bindings"]},
            {(x["local"], x["offset"]): x["bits"] for x in d["locals"]},
            {x["reg"]: x["bits"] for x in d["saved_callee"]},
        )


@dataclass(frozen=True)
class StackSnapshot:
    records: tuple[ActivationRecord, ...] = ()

    @property
    def depth(self) -> int:
        return len(self.records)

    @property
    def innermost(self) -> ActivationRecord:
        return self.records[-1]

    def to_dict(self) -> dict:
        return {"format": "unistack-snapshot", "version": VERSION,
                "records": [r.to_dict() for r in self.records]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "StackSnapshot":
        doc = json.loads(text)
        if doc.get("format") != "unistack-snapshot":
            raise SnapshotError("not a snapshot document")
        return cls(tuple(ActivationRecord.from_dict(r) for r in doc["records"]))

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<QQ", VERSION, len(self.records)))
        for r in self.records:
            _put_str(out, r.function)
            out.write(struct.pack("<Qqq", _KINDS.index(r.kind), r.point, r.frame_size))
            out.write(struct.pack("<Q", len(r.bindings)))
            for v, b in sorted(r.bindings.items()):
                _put_str(out, v)
                out.write(struct.pack("<Qqq", _LOC_KINDS.index(b.loc.kind), b.loc.index, b.value))
            out.write(struct.pack("<Q", len(r.locals)))
            for (n, o), w in sorted(r.locals.items()):
                _put_str(out, n)
                out.write(struct.pack("<qq", o, w))
            out.write(struct.pack("<Q", len(r.saved_callee)))
            for reg, w in sorted(r.saved_callee.items()):
                out.write(struct.pack("<Qq", reg, w))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "StackSnapshot":
        buf = io.BytesIO(data)
        if buf.read(4) != MAGIC:
            raise SnapshotError("bad magic")
        version, count = _get(buf, "<QQ")
        if version != VERSION:
            raise SnapshotError(f"unsupported version {version}")
        records = []
        for _ in range(count):
            name = _get_str(buf)
            kind, point, size = _get(buf, "<Qqq")
            bindings = {}
            for _ in range(_get(buf, "<Q")[0]):
                v = _get_str(buf)
                lk, idx, val = _get(buf, "<Qqq")
                bindings[v] = Binding(val, Loc(_LOC_KINDS[lk], idx))
            local_words = {}
            for _ in range(_get(buf, "<Q")[0]):
                n = _get_str(buf)
                o, w = _get(buf, "<qq")
                local_words[(n, o)] = w
            saved = {}
            for _ in range(_get(buf, "<Q")[0]):
                reg, w = _get(buf, "<Qq")
                saved[reg] = w
            records.append(ActivationRecord(name, _KINDS[kind], point, size, bindings, local_words, saved))
        if buf.read(1):
            raise SnapshotError("trailing bytes")
        return cls(tuple(records))


def _put_str(out: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    out.write(struct.pack("<Q", len(raw)))
    out.write(raw)


def _get(buf: io.BytesIO, fmt: str) -> tuple:
    size = struct.calcsize(fmt)
    raw = buf.read(size)
    if len(raw) != size:
        raise SnapshotError("truncated snapshot")
    return struct.unpack(fmt, raw)


def _get_str(buf: io.BytesIO) -> str:
    (n,) = _get(buf, "<Q")
    raw = buf.read(n)
    if len(raw) != n:
        raise SnapshotError("truncated snapshot")
    return raw.decode("utf-8")
