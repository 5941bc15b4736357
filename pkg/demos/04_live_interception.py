"""
Live interception with the preload shim
=======================================

Compile the C shim, run an unmodified BLAS caller under LD_PRELOAD, and
replay the captured trace through the simulator. The live decision log
and the simulated replay agree call for call.
"""

import json
import os
import subprocess
import sys
import tempfile

from blasoffload.interposer.build import build_shim
from blasoffload.perf import Policy, simulate
from blasoffload.traceio import read_trace

CPU_BLAS = "libopenblas.so.0"

# the "application": plain Fortran-ABI calls through ctypes, no imports
# from this package, exactly like a prebuilt binary would behave
APP = r"""
import ctypes
import numpy as np

lib = ctypes.CDLL(None)
i, d = ctypes.c_int, ctypes.c_double
rng = np.random.default_rng(7)
A = np.asfortranarray(rng.standard_normal((900, 900)))
B = np.asfortranarray(rng.standard_normal((900, 900)))
C = np.zeros((900, 900), order="F")
for _ in range(4):
    lib.dgemm_(b"N", b"N", ctypes.byref(i(900)), ctypes.byref(i(900)), ctypes.byref(i(900)),
               ctypes.byref(d(1.0)), A.ctypes.data_as(ctypes.c_void_p), ctypes.byref(i(900)),
               B.ctypes.data_as(ctypes.c_void_p), ctypes.byref(i(900)), ctypes.byref(d(1.0)),
               C.ctypes.data_as(ctypes.c_void_p), ctypes.byref(i(900)))
print("checksum %.17g" % C.sum())
"""

# build (or reuse) the shim next to its source
shim = build_shim()
print("shim:", shim)

with tempfile.TemporaryDirectory() as tmp:
    app = os.path.join(tmp, "app.py")
    with open(app, "w") as fh:
        fh.write(APP)
    trace = os.path.join(tmp, "run.jsonl")

    env = dict(os.environ)
    env["LD_PRELOAD"] = "%s %s" % (shim, CPU_BLAS)
    env["SCILIB_MODE"] = "first_use"
    env["SCILIB_TRACE"] = trace
    proc = subprocess.run(
        [sys.executable, app], capture_output=True, text=True, env=env
    )
    print(proc.stdout.strip())

    # the shim logs one JSON object per intercepted call
    events = read_trace(trace)
    print()
    print("captured %d calls:" % len(events))
    for ev in events:
        print(
            "  seq=%d %s%s %dx%dx%d decision=%-7s moved=%.1f MB"
            % (ev.seq, ev.call.precision.value, ev.call.family.value,
               ev.call.m, ev.call.n, ev.call.k, ev.decision, ev.bytes_moved / 1e6)
        )

    # a stats sidecar summarizes the run in the same shape the Python
    # runtime reports
    stats = json.load(open(trace + ".stats.json"))
    print("live totals:", stats["totals"])

    # replay: page-level accounting in the simulator reproduces the live
    # decisions and movement exactly
    rep = simulate(
        events, Policy.FIRST_USE, threshold=stats["threshold"], page_size=stats["page_size"]
    )
    print(
        "replayed: offloaded=%d moved=%d (live %d / %d)"
        % (rep.calls_offloaded, rep.bytes_moved,
           stats["totals"]["offloaded"], stats["totals"]["bytes_moved"])
    )
    assert rep.calls_offloaded == stats["totals"]["offloaded"]
    assert rep.bytes_moved == stats["totals"]["bytes_moved"]
    print("live run and replay agree")
