import ctypes
import json
import os
import subprocess
import sys

import pytest

from blasoffload.interposer import ALL_SYMBOLS
from blasoffload.interposer.build import build_shim
from blasoffload.perf import Policy, simulate
from blasoffload.policy import plan_memcopy
from blasoffload.traceio import read_trace

CPU_BLAS = "libopenblas.so.0"

WORKER = r"""
import ctypes, sys
import numpy as np

lib = ctypes.CDLL(None)
c_int, c_dbl = ctypes.c_int, ctypes.c_double

def dgemm(a, b, c, beta=0.0):
    m, k = a.shape
    n = b.shape[1]
    lib.dgemm_(b"N", b"N",
               ctypes.byref(c_int(m)), ctypes.byref(c_int(n)), ctypes.byref(c_int(k)),
               ctypes.byref(c_dbl(1.0)),
               a.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(m)),
               b.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(k)),
               ctypes.byref(c_dbl(beta)),
               c.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(m)))

def zherk(a, c):
    n, k = c.shape[0], a.shape[1]
    lib.zherk_(b"L", b"N",
               ctypes.byref(c_int(n)), ctypes.byref(c_int(k)),
               ctypes.byref(c_dbl(1.0)),
               a.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(n)),
               ctypes.byref(c_dbl(0.0)),
               c.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(n)))

rng = np.random.default_rng(21)
A = np.asfortranarray(rng.standard_normal((640, 640)))
B = np.asfortranarray(rng.standard_normal((640, 640)))
C = np.zeros((640, 640), order="F")
sa = np.asfortranarray(rng.standard_normal((96, 96)))
sc = np.zeros((96, 96), order="F")
ha = np.asfortranarray(rng.standard_normal((800, 700)) + 1j * rng.standard_normal((800, 700)))
hc = np.zeros((800, 800), dtype=np.complex128, order="F")

dgemm(A, B, C)
dgemm(sa, sa, sc)
dgemm(A, B, C, beta=0.25)
zherk(ha, hc)

print("cksum %.17g %.17g %.17g" % (C.sum(), sc.sum(), abs(hc).sum()))
"""


@pytest.fixture(scope="module")
def shim(tmp_path_factory):
    return str(build_shim())


@pytest.fixture(scope="module")
def worker(tmp_path_factory):
    path = tmp_path_factory.mktemp("shim") / "worker.py"
    path.write_text(WORKER)
    return str(path)


def run_worker(worker, preload, env=None, timeout=60):
    full_env = dict(os.environ)
    full_env.pop("SCILIB_MODE", None)
    full_env["LD_PRELOAD"] = preload
    full_env.update(env or {})
    return subprocess.run(
        [sys.executable, worker],
        capture_output=True,
        text=True,
        env=full_env,
        timeout=timeout,
    )


def test_shim_builds_and_exports_every_symbol(shim):
    lib = ctypes.CDLL(shim)
    for name in ALL_SYMBOLS:
        assert hasattr(lib, name), name


def test_build_is_cached(shim):
    first = os.stat(shim).st_mtime_ns
    assert str(build_shim()) == shim
    assert os.stat(shim).st_mtime_ns == first


def test_off_mode_is_bit_identical(shim, worker):
    plain = run_worker(worker, CPU_BLAS)
    shimmed = run_worker(worker, f"{shim} {CPU_BLAS}", env={"SCILIB_MODE": "off"})
    assert plain.returncode == 0 and shimmed.returncode == 0
    assert shimmed.stdout == plain.stdout


def test_all_modes_leave_results_bit_identical(shim, worker):
    # the mock device is the same CPU kernel, so every mode matches exactly
    plain = run_worker(worker, CPU_BLAS)
    for mode in ("first_use", "memcopy", "counter"):
        got = run_worker(worker, f"{shim} {CPU_BLAS}", env={"SCILIB_MODE": mode})
        assert got.returncode == 0
        assert got.stdout == plain.stdout, mode


def test_first_use_trace_and_stats(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_MODE": "first_use", "SCILIB_TRACE": trace},
    )
    assert proc.returncode == 0
    events = read_trace(trace)
    assert len(events) == 4
    assert [e.seq for e in events] == [0, 1, 2, 3]
    decisions = [e.decision for e in events]
    assert decisions == ["offload", "cpu", "offload", "offload"]
    # second large gemm finds every page resident
    assert events[2].bytes_moved == 0
    assert events[0].bytes_moved > 0
    assert all(e.wall_ns > 0 for e in events)
    stats = json.load(open(trace + ".stats.json"))
    t = stats["totals"]
    assert t["intercepted"] == 4
    assert t["forwarded"] + t["offloaded"] == t["intercepted"]
    assert t["offloaded"] == 3
    assert t["bytes_moved"] == sum(e.bytes_moved for e in events)
    assert "dgemm" in stats["routines"] and "zherk" in stats["routines"]
    assert "blasoffload interposer" in proc.stderr


def test_trace_replays_to_same_decisions(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_MODE": "first_use", "SCILIB_TRACE": trace},
    )
    assert proc.returncode == 0
    events = read_trace(trace)
    stats = json.load(open(trace + ".stats.json"))
    rep = simulate(events, Policy.FIRST_USE, threshold=500.0, page_size=stats["page_size"])
    assert rep.calls_offloaded == stats["totals"]["offloaded"]
    assert rep.bytes_moved == stats["totals"]["bytes_moved"]


def test_memcopy_books_staged_bytes(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_MODE": "memcopy", "SCILIB_TRACE": trace},
    )
    assert proc.returncode == 0
    for ev in read_trace(trace):
        if ev.decision == "offload":
            assert ev.bytes_moved == plan_memcopy(ev.call).total_bytes
        else:
            assert ev.bytes_moved == 0


def test_counter_books_no_explicit_movement(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_MODE": "counter", "SCILIB_TRACE": trace},
    )
    assert proc.returncode == 0
    events = read_trace(trace)
    assert sum(1 for e in events if e.decision == "offload") == 3
    assert all(e.bytes_moved == 0 for e in events)


def test_threshold_env(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_THRESHOLD": "1e9", "SCILIB_TRACE": trace},
    )
    assert proc.returncode == 0
    assert all(e.decision == "cpu" for e in read_trace(trace))


def test_capacity_env_keeps_large_calls_on_cpu(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_CAPACITY": "1M", "SCILIB_TRACE": trace, "SCILIB_DEBUG": "1"},
    )
    assert proc.returncode == 0
    assert all(e.decision == "cpu" for e in read_trace(trace))
    assert "capacity limit" in proc.stderr


def test_invalid_env_warns_and_falls_back(shim, worker):
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={
            "SCILIB_MODE": "hyperdrive",
            "SCILIB_THRESHOLD": "many",
            "SCILIB_CAPACITY": "12q",
        },
    )
    assert proc.returncode == 0
    for name in ("SCILIB_MODE", "SCILIB_THRESHOLD", "SCILIB_CAPACITY"):
        assert f"ignoring {name}" in proc.stderr


def test_mode_hyphen_alias(shim, worker, tmp_path):
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(
        worker,
        f"{shim} {CPU_BLAS}",
        env={"SCILIB_MODE": "First-Use", "SCILIB_TRACE": trace},
    )
    assert proc.returncode == 0
    assert "ignoring" not in proc.stderr
    assert json.load(open(trace + ".stats.json"))["mode"] == "first_use"


THREADED = r"""
import ctypes, threading
import numpy as np

lib = ctypes.CDLL(None)
c_int, c_dbl = ctypes.c_int, ctypes.c_double

def dgemm(a, b, c):
    m, k = a.shape
    n = b.shape[1]
    lib.dgemm_(b"N", b"N",
               ctypes.byref(c_int(m)), ctypes.byref(c_int(n)), ctypes.byref(c_int(k)),
               ctypes.byref(c_dbl(1.0)),
               a.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(m)),
               b.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(k)),
               ctypes.byref(c_dbl(0.0)),
               c.ctypes.data_as(ctypes.c_void_p), ctypes.byref(c_int(m)))

def worker(tid):
    rng = np.random.default_rng(tid)
    a = np.asfortranarray(rng.standard_normal((550, 550)))
    b = np.asfortranarray(rng.standard_normal((550, 550)))
    c = np.zeros((550, 550), order="F")
    s = np.asfortranarray(rng.standard_normal((48, 48)))
    sc = np.zeros((48, 48), order="F")
    for i in range(25):
        dgemm(a, b, c) if i % 5 == 0 else dgemm(s, s, sc)
    assert abs(c - a @ b).max() < 1e-10

threads = [threading.Thread(target=worker, args=(t,)) for t in range(8)]
for t in threads: t.start()
for t in threads: t.join()
print("done")
"""


def test_threaded_interception_conserves_counts(shim, tmp_path):
    script = tmp_path / "threaded.py"
    script.write_text(THREADED)
    trace = str(tmp_path / "t.jsonl")
    proc = run_worker(str(script), f"{shim} {CPU_BLAS}", env={"SCILIB_TRACE": trace})
    assert proc.returncode == 0, proc.stderr
    assert "done" in proc.stdout
    stats = json.load(open(trace + ".stats.json"))
    t = stats["totals"]
    assert t["intercepted"] == 8 * 25
    assert t["forwarded"] + t["offloaded"] == t["intercepted"]
    assert t["offloaded"] == 8 * 5
    events = read_trace(trace)
    assert len(events) == 200
    assert sorted(e.seq for e in events) == list(range(200))
    assert len({e.call.thread for e in events}) == 8
