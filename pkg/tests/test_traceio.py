import io
import json

import pytest

from blasoffload.model import Family, Precision, Side, Trans, Uplo, assemble_call
from blasoffload.traceio import (
    OPERAND_FIELDS,
    TRACE_FIELDS,
    TraceEvent,
    TraceFormatError,
    event_from_dict,
    event_to_dict,
    event_to_json,
    read_trace,
    write_trace,
)

from conftest import Arena, event, gemm, random_square_trace


def sample_events():
    arena = Arena()
    ev0 = event(0, gemm(512, 512, 512, arena=arena), decision="offload", bytes_moved=12345, wall_ns=999)
    trsm = assemble_call(
        Family.TRSM,
        Precision.Z,
        400,
        64,
        bases=(arena.take(400 * 400 * 16), arena.take(400 * 64 * 16)),
        side=Side.LEFT,
        uplo=Uplo.LOWER,
        trans_a=Trans.T,
        alpha=0.5 + 0.25j,
    )
    ev1 = event(1, trsm, decision="cpu")
    ev2 = event(2, gemm(32, 2400, 93536, trans_a=Trans.T, precision=Precision.D, arena=arena))
    return [ev0, ev1, ev2]


def test_round_trip_file(tmp_path):
    events = sample_events()
    path = str(tmp_path / "t.jsonl")
    write_trace(events, path)
    back = read_trace(path)
    assert back == events


def test_round_trip_file_object():
    events = sample_events()
    buf = io.StringIO()
    write_trace(events, buf)
    buf.seek(0)
    assert read_trace(buf) == events


def test_one_object_per_line_compact():
    events = sample_events()
    buf = io.StringIO()
    write_trace(events, buf)
    lines = buf.getvalue().splitlines()
    assert len(lines) == len(events)
    for raw in lines:
        assert ": " not in raw and ", " not in raw
        assert list(json.loads(raw).keys()) == list(TRACE_FIELDS)


def test_operand_serialization():
    d = event_to_dict(sample_events()[0])
    for op in d["operands"]:
        assert list(op.keys()) == list(OPERAND_FIELDS)
        assert op["base"].startswith("0x")


def test_k_zero_for_non_k_families():
    d = event_to_dict(sample_events()[1])
    assert d["k"] == 0
    assert d["transB"] == "-"
    assert d["side"] == "L"
    assert d["uplo"] == "L"
    assert d["alpha_re"] == 0.5 and d["alpha_im"] == 0.25
    back = event_from_dict(d)
    assert back.call.k is None


def test_decision_null_round_trips():
    d = event_to_dict(sample_events()[2])
    assert d["decision"] is None
    assert event_from_dict(d).decision is None


def test_blank_lines_skipped():
    buf = io.StringIO()
    write_trace(sample_events(), buf)
    padded = "\n" + buf.getvalue().replace("\n", "\n\n")
    assert len(read_trace(io.StringIO(padded))) == 3


def test_missing_field_names_line():
    events = sample_events()
    buf = io.StringIO()
    write_trace(events, buf)
    lines = buf.getvalue().splitlines()
    obj = json.loads(lines[1])
    del obj["thread"]
    lines[1] = json.dumps(obj, separators=(",", ":"))
    with pytest.raises(TraceFormatError, match="trace line 2.*thread"):
        read_trace(io.StringIO("\n".join(lines)))


def test_invalid_json_names_line():
    buf = io.StringIO()
    write_trace(sample_events(), buf)
    broken = buf.getvalue().splitlines()
    broken[2] = broken[2][:-5]
    with pytest.raises(TraceFormatError, match="trace line 3"):
        read_trace(io.StringIO("\n".join(broken)))
    with pytest.raises(TraceFormatError, match="trace line 1"):
        read_trace(io.StringIO("[1,2,3]\n"))


def test_bad_enum_rejected():
    d = event_to_dict(sample_events()[0])
    d["routine"] = "gemv"
    with pytest.raises(TraceFormatError, match="routine"):
        event_from_dict(d, line=7)
    d = event_to_dict(sample_events()[0])
    d["decision"] = "maybe"
    with pytest.raises(TraceFormatError, match="decision"):
        event_from_dict(d, line=7)


def test_bad_operand_rejected():
    d = event_to_dict(sample_events()[0])
    d["operands"][0]["base"] = "xyz"
    with pytest.raises(TraceFormatError, match="operand"):
        event_from_dict(d, line=4)


def test_json_stable_for_equal_events():
    events = random_square_trace(9, n_events=5)
    assert [event_to_json(e) for e in events] == [event_to_json(e) for e in events]
