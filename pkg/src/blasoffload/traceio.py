"""Line-delimited JSON trace format shared by the live interposer, the
synthetic workload generator and the simulator.

One JSON object per line, one intercepted call per object.  The field set
and order are frozen; readers must reject lines that are missing fields
rather than guess.  k is serialized as 0 for families that take no k.
wall_ns is 0 when no wall-clock measurement exists (synthetic traces).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import IO, Iterable, Optional, Union

from .model import (
    BlasCall,
    Family,
    K_FAMILIES,
    OperandSpan,
    Precision,
    Role,
    Side,
    Trans,
    Uplo,
)

TRACE_FIELDS = (
    "seq",
    "routine",
    "precision",
    "transA",
    "transB",
    "side",
    "uplo",
    "m",
    "n",
    "k",
    "alpha_re",
    "alpha_im",
    "beta_re",
    "beta_im",
    "operands",
    "thread",
    "decision",
    "bytes_moved",
    "wall_ns",
)

OPERAND_FIELDS = ("base", "rows", "cols", "ld", "elem_bytes", "role")


class TraceFormatError(ValueError):
    """Raised with the 1-based line number of the offending record."""

    def __init__(self, line: int, message: str):
        super().__init__(f"trace line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    call: BlasCall
    decision: Optional[str] = None  # "offload" | "cpu" | None
    bytes_moved: int = 0
    wall_ns: int = 0


def _flag(value) -> str:
    return "-" if value is None else value.value


def event_to_dict(event: TraceEvent) -> dict:
    call = event.call
    return {
        "seq": event.seq,
        "routine": call.family.value,
        "precision": call.precision.value,
        "transA": call.trans_a.value,
        "transB": _flag(call.trans_b),
        "side": _flag(call.side),
        "uplo": _flag(call.uplo),
        "m": call.m,
        "n": call.n,
        "k": call.k if call.k is not None else 0,
        "alpha_re": call.alpha.real,
        "alpha_im": call.alpha.imag,
        "beta_re": call.beta.real,
        "beta_im": call.beta.imag,
        "operands": [
            {
                "base": f"0x{op.base:x}",
                "rows": op.rows,
                "cols": op.cols,
                "ld": op.ld,
                "elem_bytes": op.elem_bytes,
                "role": op.role.value,
            }
            for op in call.operands
        ],
        "thread": call.thread,
        "decision": event.decision,
        "bytes_moved": event.bytes_moved,
        "wall_ns": event.wall_ns,
    }


def event_to_json(event: TraceEvent) -> str:
    return json.dumps(event_to_dict(event), separators=(",", ":"))


def _parse_enum(cls, raw, line: int, what: str):
    try:
        return cls(raw)
    except ValueError:
        raise TraceFormatError(line, f"bad {what}: {raw!r}") from None


def event_from_dict(obj: dict, line: int = 0) -> TraceEvent:
    missing = [f for f in TRACE_FIELDS if f not in obj]
    if missing:
        raise TraceFormatError(line, f"missing fields: {', '.join(missing)}")
    family = _parse_enum(Family, obj["routine"], line, "routine")
    precision = _parse_enum(Precision, obj["precision"], line, "precision")
    trans_a = _parse_enum(Trans, obj["transA"], line, "transA")
    trans_b = None if obj["transB"] == "-" else _parse_enum(Trans, obj["transB"], line, "transB")
    side = None if obj["side"] == "-" else _parse_enum(Side, obj["side"], line, "side")
    uplo = None if obj["uplo"] == "-" else _parse_enum(Uplo, obj["uplo"], line, "uplo")
    try:
        operands = tuple(
            OperandSpan(
                base=int(op["base"], 16),
                rows=int(op["rows"]),
                cols=int(op["cols"]),
                ld=int(op["ld"]),
                elem_bytes=int(op["elem_bytes"]),
                role=_parse_enum(Role, op["role"], line, "role"),
            )
            for op in obj["operands"]
        )
    except TraceFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise TraceFormatError(line, f"bad operand: {exc}") from None
    k_raw = int(obj["k"])
    k: Optional[int] = k_raw
    if k_raw == 0 and family not in K_FAMILIES:
        k = None
    call = BlasCall(
        family=family,
        precision=precision,
        m=int(obj["m"]),
        n=int(obj["n"]),
        k=k,
        trans_a=trans_a,
        trans_b=trans_b,
        side=side,
        uplo=uplo,
        alpha=complex(float(obj["alpha_re"]), float(obj["alpha_im"])),
        beta=complex(float(obj["beta_re"]), float(obj["beta_im"])),
        operands=operands,
        thread=int(obj["thread"]),
    )
    decision = obj["decision"]
    if decision not in (None, "offload", "cpu"):
        raise TraceFormatError(line, f"bad decision: {decision!r}")
    return TraceEvent(
        seq=int(obj["seq"]),
        call=call,
        decision=decision,
        bytes_moved=int(obj["bytes_moved"]),
        wall_ns=int(obj["wall_ns"]),
    )


def write_trace(events: Iterable[TraceEvent], dest: Union[str, IO[str]]) -> None:
    if isinstance(dest, str):
        with open(dest, "w") as fh:
            write_trace(events, fh)
        return
    for ev in events:
        dest.write(event_to_json(ev))
        dest.write("\n")


def read_trace(source: Union[str, IO[str]]) -> list[TraceEvent]:
    """Parse a trace file.  Structural problems raise TraceFormatError with
    the line number; semantic validation of each call is the simulator's job.
    """
    if isinstance(source, str):
        with open(source) as fh:
            return read_trace(fh)
    events = []
    for lineno, raw in enumerate(source, start=1):
        raw = raw.strip()
        if not raw:
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(lineno, f"not valid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise TraceFormatError(lineno, "record is not an object")
        events.append(event_from_dict(obj, lineno))
    return events
