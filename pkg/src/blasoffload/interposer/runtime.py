"""In-process interposer: numpy-facing entry points with the policy logic
of the preload shim, driving a real CPU BLAS through ctypes.

The runtime exposes one method per routine (runtime.dgemm, runtime.ztrsm,
...) taking flags, dimensions, scalars, and Fortran-ordered numpy arrays
in the routine's natural argument order, minus the leading-dimension
arguments, which are read from the arrays (keyword overrides lda=, ldb=,
ldc= exist for padded views).  Rank-k updates record m = n, since the
routines take no m argument.

Every call executes on the CPU library; calls that pass the size gate
are accounted as device executions and drive the residency map, exactly
like the preload shim.  The device backend is pluggable; the default
mock runs the CPU routine and reports success.
"""

from __future__ import annotations

import atexit
import ctypes
import ctypes.util
import json
import os
import platform
import sys
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..model import BlasCall, Side, Trans, Uplo, assemble_call, should_offload
from ..policy import (
    CounterEmulatorConfig,
    ResidencyMap,
    plan_counter_emulated,
    plan_first_use,
    plan_memcopy,
)
from ..traceio import TraceEvent, write_trace
from .abi import ROUTINES, RoutineSpec
from .config import Migration, Mode, RuntimeConfig

_LD_TOKENS = ("lda", "ldb", "ldc")
_ARRAY_TOKENS = ("A", "B", "C")
_MOVE_PAGES_NR = {"x86_64": 279, "aarch64": 239}
_MPOL_MF_MOVE = 2
_SIDE_MAP = {"L": Side.LEFT, "R": Side.RIGHT}


def find_cpu_blas() -> str:
    """Locate a shared CPU BLAS with Fortran symbols."""
    for name in ("openblas", "blas"):
        path = ctypes.util.find_library(name)
        if path:
            return path
    try:
        import scipy  # noqa: F401

        libsdir = os.path.join(os.path.dirname(os.path.dirname(scipy.__file__)), "scipy.libs")
        for entry in sorted(os.listdir(libsdir)):
            if entry.startswith(("libopenblas", "libscipy_openblas")):
                return os.path.join(libsdir, entry)
    except (ImportError, OSError):
        pass
    raise RuntimeError("no CPU BLAS found: install OpenBLAS or scipy, or pass blas_path=")


class MockDeviceBackend:
    """Stands in for device BLAS: runs the CPU routine, accounted as DEVICE."""

    name = "mock"

    def init(self) -> None:
        # the real pool/handle setup has no observable contract here
        pass

    def execute(self, fn, cargs) -> None:
        fn(*cargs)


@dataclass
class BackendBinding:
    """Resolved execution backends plus the migration mechanism."""

    cpu_blas: dict
    device_blas: object
    migration: Migration = Migration.SIMULATED
    device_node: int = 0


@dataclass
class _SymbolStats:
    intercepted: int = 0
    forwarded: int = 0
    offloaded: int = 0
    device_fallbacks: int = 0


@dataclass
class _State:
    rmap: ResidencyMap
    reuse: dict = field(default_factory=dict)
    resident: set = field(default_factory=set)
    seq: int = 0
    bytes_moved: int = 0
    move_failures: int = 0


def _os_move_pages(pages: list[int], page_size: int, node: int) -> list[int]:
    """Ask the OS to place the given pages on a NUMA node.

    Returns the page numbers that could not be moved.  A failed move
    leaves the page where it was; data is never at risk, only placement.
    """
    nr = _MOVE_PAGES_NR.get(platform.machine())
    if nr is None or not pages:
        return list(pages)
    count = len(pages)
    addrs = (ctypes.c_void_p * count)(*[p * page_size for p in pages])
    nodes = (ctypes.c_int * count)(*([node] * count))
    status = (ctypes.c_int * count)()
    libc = ctypes.CDLL(None, use_errno=True)
    rc = libc.syscall(
        ctypes.c_long(nr),
        ctypes.c_long(0),
        ctypes.c_ulong(count),
        addrs,
        nodes,
        status,
        ctypes.c_int(_MPOL_MF_MOVE),
    )
    if rc < 0:
        return list(pages)
    return [p for p, s in zip(pages, status) if s < 0]


def _flag(value, enum_cls, what: str):
    try:
        return enum_cls(str(value).upper()[:1])
    except ValueError:
        raise ValueError(f"bad {what} flag: {value!r}") from None


class BlasRuntime:
    """One interposer instance: config, backends, residency, statistics."""

    def __init__(
        self,
        config: Optional[RuntimeConfig] = None,
        blas_path: Optional[str] = None,
        device_backend=None,
        migration: Migration = Migration.SIMULATED,
        device_node: int = 0,
    ):
        self.config = config if config is not None else RuntimeConfig.from_env()
        path = blas_path or find_cpu_blas()
        lib = ctypes.CDLL(path, mode=ctypes.RTLD_GLOBAL)
        cpu = {}
        for spec in ROUTINES.values():
            fn = None
            for sym in spec.symbols:
                fn = getattr(lib, sym, None)
                if fn is not None:
                    break
            if fn is None:
                raise RuntimeError(f"CPU BLAS {path} is missing symbol {spec.symbols[0]}")
            fn.restype = None
            fn.argtypes = spec.argtypes()
            cpu[spec.name] = fn
        backend = device_backend if device_backend is not None else MockDeviceBackend()
        backend.init()
        self.binding = BackendBinding(
            cpu_blas=cpu,
            device_blas=backend,
            migration=migration,
            device_node=device_node,
        )
        self.blas_path = path
        self.counter_cfg = CounterEmulatorConfig()
        self._state = _State(rmap=ResidencyMap(self.config.page_size))
        self._stats = {name: _SymbolStats() for name in ROUTINES}
        self._lock = threading.Lock()
        self._tids: dict[int, int] = {}
        self._trace_fh = None
        if self.config.trace_path:
            try:
                self._trace_fh = open(self.config.trace_path, "w", encoding="utf-8")
            except OSError as exc:
                print(
                    f"blasoffload: cannot open trace {self.config.trace_path!r}: {exc}",
                    file=sys.stderr,
                )
        self._closed = False
        for name, spec in ROUTINES.items():
            setattr(self, name, self._make_entry(spec))
        atexit.register(self.close)

    # -- call path ---------------------------------------------------

    def _make_entry(self, spec: RoutineSpec):
        def entry(*args, **kwargs):
            return self._intercepted_call(spec, args, kwargs)

        entry.__name__ = spec.name
        entry.__doc__ = f"Intercepted {spec.name} ({spec.family.value}, {spec.npdtype})."
        return entry

    def _thread_index(self) -> int:
        ident = threading.get_ident()
        with self._lock:
            idx = self._tids.get(ident)
            if idx is None:
                idx = len(self._tids)
                self._tids[ident] = idx
        return idx

    def _parse_args(self, spec: RoutineSpec, args, kwargs):
        tokens = [t for t in spec.arg_order if t not in _LD_TOKENS]
        if len(args) != len(tokens):
            raise TypeError(
                f"{spec.name} takes {len(tokens)} positional arguments "
                f"({', '.join(tokens)}), got {len(args)}"
            )
        vals = dict(zip(tokens, args))
        bad = set(kwargs) - set(_LD_TOKENS)
        if bad:
            raise TypeError(f"{spec.name} got unexpected keywords {sorted(bad)}")
        arrays = []
        lds = []
        for ld_token, token in zip(_LD_TOKENS, _ARRAY_TOKENS):
            if token not in vals:
                continue
            arr = vals[token]
            if not isinstance(arr, np.ndarray) or arr.ndim != 2:
                raise TypeError(f"{spec.name} operand {token} must be a 2-d ndarray")
            if arr.dtype != np.dtype(spec.npdtype):
                raise TypeError(
                    f"{spec.name} operand {token} must be {spec.npdtype}, got {arr.dtype}"
                )
            itemsize = arr.itemsize
            if arr.strides[0] != itemsize or arr.strides[1] % itemsize:
                raise ValueError(
                    f"{spec.name} operand {token} must be Fortran-ordered (column-major)"
                )
            ld = kwargs.get(ld_token)
            if ld is None:
                ld = arr.strides[1] // itemsize if arr.shape[1] > 1 else arr.shape[0]
            arrays.append(arr)
            lds.append(int(ld))
        return vals, arrays, lds

    def _build_call(self, spec: RoutineSpec, vals, arrays, lds, thread: int) -> BlasCall:
        trans_a = _flag(vals.get("transa", "N"), Trans, "trans")
        trans_b = _flag(vals["transb"], Trans, "trans") if "transb" in vals else None
        side = None
        if "side" in vals:
            side = _SIDE_MAP.get(str(vals["side"]).upper()[:1])
            if side is None:
                raise ValueError(f"bad side flag: {vals['side']!r}")
        uplo = _flag(vals["uplo"], Uplo, "uplo") if "uplo" in vals else None
        call = assemble_call(
            spec.family,
            spec.precision,
            int(vals["m"]) if "m" in vals else int(vals["n"]),
            int(vals["n"]),
            int(vals["k"]) if "k" in vals else None,
            bases=tuple(int(a.ctypes.data) for a in arrays),
            lds=tuple(lds),
            trans_a=trans_a,
            trans_b=trans_b,
            side=side,
            uplo=uplo,
            alpha=complex(vals["alpha"]),
            beta=complex(vals.get("beta", 0.0)),
            thread=thread,
        )
        for i, (op, arr) in enumerate(zip(call.operands, arrays)):
            if arr.shape[0] < op.rows or arr.shape[1] < op.cols:
                raise ValueError(
                    f"{spec.name} operand {_ARRAY_TOKENS[i]} is {arr.shape[0]}x{arr.shape[1]}, "
                    f"needs at least {op.rows}x{op.cols} for these dims and flags"
                )
        return call

    def _cargs(self, spec: RoutineSpec, vals, arrays, lds):
        refs = []
        arr_it = iter(arrays)
        ld_it = iter(lds)
        for token in spec.arg_order:
            if token in ("transa", "transb", "side", "uplo", "diag"):
                refs.append(str(vals[token]).encode()[:1])
            elif token in ("m", "n", "k"):
                refs.append(ctypes.c_int(int(vals[token])))
            elif token in _LD_TOKENS:
                refs.append(ctypes.c_int(next(ld_it)))
            elif token in ("alpha", "beta"):
                refs.append(spec.scalar_ref(token, complex(vals.get(token, 0.0))))
            else:
                refs.append(ctypes.c_void_p(next(arr_it).ctypes.data))
        return refs

    def _new_device_bytes(self, call: BlasCall) -> int:
        """Page bytes a migration plan would add, without touching state."""
        rmap = self._state.rmap
        ranges = sorted(rmap.page_range(op) for op in call.operands)
        merged: list[list[int]] = []
        for first, stop in ranges:
            if merged and first <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], stop)
            else:
                merged.append([first, stop])
        new_pages = 0
        for first, stop in merged:
            dev = sum(b - a for a, b in rmap.device_runs(first, stop))
            new_pages += (stop - first) - dev
        return new_pages * rmap.page_size

    def _over_capacity(self, call: BlasCall) -> bool:
        limit = self.config.capacity_limit
        if limit is None:
            return False
        with self._lock:
            if self.config.mode is Mode.MEMCOPY:
                return sum(op.accessed_bytes for op in call.operands) > limit
            # advisory under concurrency: check and booking are separate
            return self._state.rmap.device_bytes + self._new_device_bytes(call) > limit

    def _intercepted_call(self, spec: RoutineSpec, args, kwargs):
        vals, arrays, lds = self._parse_args(spec, args, kwargs)
        thread = self._thread_index()
        call = self._build_call(spec, vals, arrays, lds, thread)
        offload = self.config.mode is not Mode.OFF and should_offload(
            call, self.config.threshold
        )
        if offload and self._over_capacity(call):
            if self.config.debug_level >= 1:
                print(
                    f"blasoffload: capacity limit keeps {spec.name} on the CPU",
                    file=sys.stderr,
                )
            offload = False

        cargs = self._cargs(spec, vals, arrays, lds)
        fn = self.binding.cpu_blas[spec.name]
        fell_back = False
        t0 = time.perf_counter_ns()
        if offload:
            try:
                self.binding.device_blas.execute(fn, cargs)
            except Exception as exc:
                fell_back = True
                if self.config.debug_level >= 1:
                    print(
                        f"blasoffload: device backend failed on {spec.name} ({exc}); "
                        "falling back to CPU",
                        file=sys.stderr,
                    )
                fn(*cargs)
        else:
            fn(*cargs)
        wall_ns = time.perf_counter_ns() - t0

        with self._lock:
            st = self._stats[spec.name]
            st.intercepted += 1
            executed_offload = offload and not fell_back
            if fell_back:
                st.device_fallbacks += 1
            moved = 0
            if executed_offload:
                st.offloaded += 1
                moved = self._book_offload(call)
            else:
                st.forwarded += 1
            if self._trace_fh is not None:
                event = TraceEvent(
                    seq=self._state.seq,
                    call=call,
                    decision="offload" if executed_offload else "cpu",
                    bytes_moved=moved,
                    wall_ns=wall_ns,
                )
                write_trace([event], self._trace_fh)
            self._state.seq += 1
        return None

    def _book_offload(self, call: BlasCall) -> int:
        state = self._state
        mode = self.config.mode
        if mode is Mode.MEMCOPY:
            plan = plan_memcopy(call)
            moved = plan.total_bytes
            state.bytes_moved += moved
            return moved
        keys = {(op.base, op.accessed_bytes) for op in call.operands}
        for key in keys:
            if key in state.resident:
                state.reuse[key] += 1
        if mode is Mode.COUNTER:
            plan, _ = plan_counter_emulated(call, state.rmap, self.counter_cfg, tick=state.seq)
        else:
            plan, _ = plan_first_use(call, state.rmap, tick=state.seq)
        moved = plan.migrated_bytes
        if self.binding.migration is Migration.OS_MOVE_PAGES:
            for action in plan.actions:
                if action.pages is None:
                    continue
                first, stop = action.pages
                failed = _os_move_pages(
                    list(range(first, stop)), state.rmap.page_size, self.binding.device_node
                )
                if failed:
                    state.move_failures += len(failed)
                    for page in failed:
                        state.rmap.demote(page, page + 1)
                    moved -= len(failed) * state.rmap.page_size
                    if self.config.debug_level >= 1:
                        print(
                            f"blasoffload: move_pages failed for {len(failed)} pages; "
                            "leaving them host-resident",
                            file=sys.stderr,
                        )
        state.bytes_moved += moved
        for op in call.operands:
            key = (op.base, op.accessed_bytes)
            if key not in state.resident and state.rmap.is_fully_device(op):
                state.resident.add(key)
                state.reuse.setdefault(key, 0)
        return moved

    # -- reporting ---------------------------------------------------

    def stats(self) -> dict:
        """Snapshot of the counters, shaped like the shim's stats file."""
        with self._lock:
            routines = {
                name: {
                    "intercepted": st.intercepted,
                    "forwarded": st.forwarded,
                    "offloaded": st.offloaded,
                }
                for name, st in sorted(self._stats.items())
                if st.intercepted
            }
            reuse = self._state.reuse
            mean = sum(reuse.values()) / len(reuse) if reuse else 0.0
            return {
                "mode": self.config.mode.value,
                "threshold": self.config.threshold,
                "page_size": self.config.page_size,
                "routines": routines,
                "totals": {
                    "intercepted": sum(s.intercepted for s in self._stats.values()),
                    "forwarded": sum(s.forwarded for s in self._stats.values()),
                    "offloaded": sum(s.offloaded for s in self._stats.values()),
                    "bytes_moved": self._state.bytes_moved,
                    "device_fallbacks": sum(s.device_fallbacks for s in self._stats.values()),
                    "move_failures": self._state.move_failures,
                },
                "mean_reuse": mean,
            }

    def _emit_stats(self) -> None:
        snap = self.stats()
        if not snap["totals"]["intercepted"] and self._trace_fh is None:
            return
        lines = [
            f"blasoffload interposer: mode={snap['mode']} "
            f"threshold={snap['threshold']:g} page_size={snap['page_size']}",
            f"{'routine':<10} {'intercepted':>11} {'forwarded':>9} {'offloaded':>9}",
        ]
        for name, row in snap["routines"].items():
            lines.append(
                f"{name:<10} {row['intercepted']:>11} {row['forwarded']:>9} {row['offloaded']:>9}"
            )
        tot = snap["totals"]
        lines.append(
            f"{'total':<10} {tot['intercepted']:>11} {tot['forwarded']:>9} {tot['offloaded']:>9}"
        )
        lines.append(f"bytes_moved={tot['bytes_moved']} mean_reuse={snap['mean_reuse']:.2f}")
        print("\n".join(lines), file=sys.stderr)
        if self.config.trace_path:
            stats_path = self.config.trace_path + ".stats.json"
            try:
                with open(stats_path, "w", encoding="utf-8") as fh:
                    json.dump(snap, fh, indent=2)
                    fh.write("\n")
            except OSError:
                print(json.dumps(snap), file=sys.stderr)

    def close(self) -> None:
        """Flush the trace and emit statistics; safe to call twice."""
        if self._closed:
            return
        self._closed = True
        self._emit_stats()
        if self._trace_fh is not None:
            self._trace_fh.close()
            self._trace_fh = None
