import ctypes
import json
import threading

import numpy as np
import pytest

from blasoffload.interposer import (
    ALL_SYMBOLS,
    BlasRuntime,
    Migration,
    Mode,
    ROUTINES,
    RuntimeConfig,
    detect_page_size,
)
from blasoffload.perf import Policy, simulate
from blasoffload.traceio import read_trace

RNG = np.random.default_rng(12)


def fmat(shape, dtype=np.float64, rng=RNG):
    a = rng.standard_normal(shape)
    if np.issubdtype(dtype, np.complexfloating):
        a = a + 1j * rng.standard_normal(shape)
    return np.asfortranarray(a.astype(dtype))


def lower_dd(n, dtype=np.float64, rng=RNG):
    # diagonally dominant lower-triangular: solves stay well conditioned
    a = np.tril(rng.standard_normal((n, n)))
    if np.issubdtype(dtype, np.complexfloating):
        a = a + 1j * np.tril(rng.standard_normal((n, n)))
    a += np.eye(n) * (2 * n)
    return np.asfortranarray(a.astype(dtype))


def make_runtime(**kw):
    cfg = RuntimeConfig(
        mode=kw.pop("mode", Mode.FIRST_USE),
        threshold=kw.pop("threshold", 500.0),
        page_size=kw.pop("page_size", 4096),
        debug_level=kw.pop("debug_level", 0),
        trace_path=kw.pop("trace_path", None),
        capacity_limit=kw.pop("capacity_limit", None),
    )
    return BlasRuntime(config=cfg, **kw)


class TestConfig:
    def test_defaults(self):
        cfg = RuntimeConfig.from_env(env={})
        assert cfg.mode is Mode.FIRST_USE
        assert cfg.threshold == 500.0
        assert cfg.debug_level == 0
        assert cfg.trace_path is None
        assert cfg.capacity_limit is None
        assert cfg.page_size in (4096, 65536)

    def test_parses_everything(self):
        cfg = RuntimeConfig.from_env(
            env={
                "SCILIB_MODE": "MemCopy",
                "SCILIB_THRESHOLD": "750",
                "SCILIB_TRACE": "/tmp/t.jsonl",
                "SCILIB_DEBUG": "2",
                "SCILIB_CAPACITY": "2G",
            }
        )
        assert cfg.mode is Mode.MEMCOPY
        assert cfg.threshold == 750.0
        assert cfg.trace_path == "/tmp/t.jsonl"
        assert cfg.debug_level == 2
        assert cfg.capacity_limit == 2 << 30

    def test_mode_hyphen_alias(self):
        cfg = RuntimeConfig.from_env(env={"SCILIB_MODE": "first-use"})
        assert cfg.mode is Mode.FIRST_USE

    def test_invalid_values_warn_and_fall_back(self, capsys):
        cfg = RuntimeConfig.from_env(
            env={
                "SCILIB_MODE": "turbo",
                "SCILIB_THRESHOLD": "soon",
                "SCILIB_CAPACITY": "-5",
                "SCILIB_DEBUG": "loud",
            }
        )
        err = capsys.readouterr().err
        assert cfg.mode is Mode.FIRST_USE
        assert cfg.threshold == 500.0
        assert cfg.capacity_limit is None
        assert cfg.debug_level == 0
        for name in ("SCILIB_MODE", "SCILIB_THRESHOLD", "SCILIB_CAPACITY", "SCILIB_DEBUG"):
            assert f"ignoring {name}" in err

    def test_capacity_suffixes(self):
        for raw, want in (("1024", 1024), ("16k", 16 << 10), ("3M", 3 << 20), ("2t", 2 << 40)):
            cfg = RuntimeConfig.from_env(env={"SCILIB_CAPACITY": raw})
            assert cfg.capacity_limit == want

    def test_debug_clamped(self):
        assert RuntimeConfig.from_env(env={"SCILIB_DEBUG": "9"}).debug_level == 3
        assert RuntimeConfig.from_env(env={"SCILIB_DEBUG": "-4"}).debug_level == 0

    def test_empty_trace_means_none(self):
        assert RuntimeConfig.from_env(env={"SCILIB_TRACE": ""}).trace_path is None

    def test_detected_page_size_is_supported(self):
        assert detect_page_size() in (4096, 65536)


class TestAbi:
    def test_symbol_inventory(self):
        assert len(ROUTINES) == 30
        assert len(ALL_SYMBOLS) == 60
        assert "dgemm_" in ALL_SYMBOLS and "dgemm" in ALL_SYMBOLS
        assert "zher2k_" in ALL_SYMBOLS
        assert "sherk" not in ALL_SYMBOLS  # hermitian families are complex-only

    def test_gemm_argtypes_arity(self):
        spec = ROUTINES["dgemm"]
        assert len(spec.argtypes()) == 13

    def test_herk_scalars_are_real(self):
        spec = ROUTINES["zherk"]
        ref = spec.scalar_ref("alpha", 2.5)
        assert isinstance(ref, ctypes.c_double)
        gemm = ROUTINES["zgemm"]
        arr = gemm.scalar_ref("alpha", 1.0 + 2.0j)
        assert len(arr) == 2 and arr[0] == 1.0 and arr[1] == 2.0

    def test_her2k_beta_real_alpha_complex(self):
        spec = ROUTINES["cher2k"]
        assert spec.scalar_is_complex("alpha")
        assert not spec.scalar_is_complex("beta")


class TestNumerics:
    def test_dgemm_matches_numpy(self):
        rt = make_runtime()
        a, b = fmat((520, 300)), fmat((300, 410))
        c = np.zeros((520, 410), order="F")
        rt.dgemm("N", "N", 520, 410, 300, 1.0, a, b, 0.0, c)
        np.testing.assert_allclose(c, a @ b, rtol=1e-9, atol=1e-12)
        rt.close()

    def test_dgemm_trans_and_beta(self):
        rt = make_runtime()
        a, b = fmat((300, 520)), fmat((410, 300))
        c0 = fmat((520, 410))
        c = c0.copy(order="F")
        rt.dgemm("T", "T", 520, 410, 300, 2.0, a, b, 0.5, c)
        np.testing.assert_allclose(c, 2.0 * (a.T @ b.T) + 0.5 * c0, rtol=1e-9, atol=1e-12)
        rt.close()

    def test_zgemm_conjugate(self):
        rt = make_runtime()
        a = fmat((200, 150), np.complex128)
        b = fmat((200, 180), np.complex128)
        c = np.zeros((150, 180), dtype=np.complex128, order="F")
        rt.zgemm("C", "N", 150, 180, 200, 1.0 + 0.5j, a, b, 0.0, c)
        np.testing.assert_allclose(c, (1.0 + 0.5j) * (a.conj().T @ b), rtol=1e-9, atol=1e-12)
        rt.close()

    def test_dsymm_left(self):
        rt = make_runtime()
        s = fmat((220, 220))
        s = np.asfortranarray((s + s.T) / 2)
        b = fmat((220, 90))
        c = np.zeros((220, 90), order="F")
        rt.dsymm("L", "U", 220, 90, 1.0, s, b, 0.0, c)
        np.testing.assert_allclose(c, s @ b, rtol=1e-9, atol=1e-12)
        rt.close()

    def test_zherk_builds_hermitian(self):
        rt = make_runtime()
        a = fmat((240, 160), np.complex128)
        c = np.zeros((240, 240), dtype=np.complex128, order="F")
        rt.zherk("L", "N", 240, 160, 1.0, a, 0.0, c)
        want = np.tril(a @ a.conj().T)
        np.testing.assert_allclose(np.tril(c), want, rtol=1e-9, atol=1e-12)
        rt.close()

    def test_dsyr2k(self):
        rt = make_runtime()
        a, b = fmat((130, 70)), fmat((130, 70))
        c = np.zeros((130, 130), order="F")
        rt.dsyr2k("U", "N", 130, 70, 1.0, a, b, 0.0, c)
        want = np.triu(a @ b.T + b @ a.T)
        np.testing.assert_allclose(np.triu(c), want, rtol=1e-9, atol=1e-12)
        rt.close()

    def test_dtrmm_inplace(self):
        rt = make_runtime()
        t = lower_dd(150)
        b = fmat((150, 60))
        want = t @ b
        rt.dtrmm("L", "L", "N", "N", 150, 60, 1.0, t, b)
        np.testing.assert_allclose(b, want, rtol=1e-9, atol=1e-12)
        rt.close()

    def test_ztrsm_solves(self):
        rt = make_runtime()
        t = lower_dd(200, np.complex128)
        b = fmat((200, 50), np.complex128)
        b0 = b.copy()
        rt.ztrsm("L", "L", "N", "N", 200, 50, 1.0 + 0.0j, t, b)
        np.testing.assert_allclose(t @ b, b0, rtol=1e-10)
        rt.close()

    def test_offloaded_path_same_numbers(self):
        # the mock device backend runs the same kernel: identical bits
        lo = make_runtime(threshold=1e12)
        hi = make_runtime(threshold=0.0)
        a, b = fmat((600, 600)), fmat((600, 600))
        c1 = np.zeros((600, 600), order="F")
        c2 = np.zeros((600, 600), order="F")
        lo.dgemm("N", "N", 600, 600, 600, 1.0, a, b, 0.0, c1)
        hi.dgemm("N", "N", 600, 600, 600, 1.0, a, b, 0.0, c2)
        assert lo.stats()["totals"]["offloaded"] == 0
        assert hi.stats()["totals"]["offloaded"] == 1
        np.testing.assert_array_equal(c1, c2)
        lo.close()
        hi.close()

    def test_rejects_c_order_arrays(self):
        rt = make_runtime()
        a = np.ascontiguousarray(RNG.standard_normal((64, 64)))
        b = fmat((64, 64))
        c = np.zeros((64, 64), order="F")
        with pytest.raises((ValueError, TypeError)):
            rt.dgemm("N", "N", 64, 64, 64, 1.0, a, b, 0.0, c)
        rt.close()

    def test_rejects_wrong_dtype(self):
        rt = make_runtime()
        a = fmat((64, 64), np.float32)
        b = fmat((64, 64))
        c = np.zeros((64, 64), order="F")
        with pytest.raises((ValueError, TypeError)):
            rt.dgemm("N", "N", 64, 64, 64, 1.0, a, b, 0.0, c)
        rt.close()


class TestAccounting:
    def test_gate_and_conservation(self):
        rt = make_runtime()
        a, b = fmat((520, 520)), fmat((520, 520))
        c = np.zeros((520, 520), order="F")
        s_a, s_b = fmat((100, 100)), fmat((100, 100))
        s_c = np.zeros((100, 100), order="F")
        for _ in range(3):
            rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        for _ in range(2):
            rt.dgemm("N", "N", 100, 100, 100, 1.0, s_a, s_b, 0.0, s_c)
        t = rt.stats()["totals"]
        assert t["intercepted"] == 5
        assert t["offloaded"] == 3
        assert t["forwarded"] == 2
        assert t["forwarded"] + t["offloaded"] == t["intercepted"]
        rt.close()

    def test_exactly_once_migration(self):
        rt = make_runtime()
        a, b = fmat((520, 520)), fmat((520, 520))
        c = np.zeros((520, 520), order="F")
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        first = rt.stats()["totals"]["bytes_moved"]
        assert first > 0
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        assert rt.stats()["totals"]["bytes_moved"] == first
        assert rt.stats()["mean_reuse"] == pytest.approx(1.0)
        rt.close()

    def test_capacity_keeps_call_on_cpu(self, capsys):
        rt = make_runtime(capacity_limit=1 << 20, debug_level=1)
        a, b = fmat((600, 600)), fmat((600, 600))
        c = np.zeros((600, 600), order="F")
        rt.dgemm("N", "N", 600, 600, 600, 1.0, a, b, 0.0, c)
        np.testing.assert_allclose(c, a @ b, rtol=1e-9, atol=1e-12)
        t = rt.stats()["totals"]
        assert t["offloaded"] == 0 and t["forwarded"] == 1
        assert "capacity limit" in capsys.readouterr().err
        rt.close()

    def test_device_backend_failure_falls_back(self):
        class Flaky:
            def __init__(self):
                self.calls = 0

            def init(self):
                pass

            def execute(self, fn, cargs):
                self.calls += 1
                raise RuntimeError("device exploded")

        backend = Flaky()
        rt = make_runtime(device_backend=backend)
        a, b = fmat((600, 600)), fmat((600, 600))
        c = np.zeros((600, 600), order="F")
        rt.dgemm("N", "N", 600, 600, 600, 1.0, a, b, 0.0, c)
        np.testing.assert_allclose(c, a @ b, rtol=1e-9, atol=1e-12)
        t = rt.stats()["totals"]
        assert backend.calls == 1
        assert t["device_fallbacks"] == 1
        assert t["offloaded"] == 0 and t["forwarded"] == 1
        rt.close()

    def test_recording_backend_sees_only_offloads(self):
        class Recorder:
            def __init__(self):
                self.calls = 0

            def init(self):
                pass

            def execute(self, fn, cargs):
                self.calls += 1
                fn(*cargs)

        backend = Recorder()
        rt = make_runtime(device_backend=backend)
        a, b = fmat((520, 520)), fmat((520, 520))
        c = np.zeros((520, 520), order="F")
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        s = fmat((80, 80))
        sc = np.zeros((80, 80), order="F")
        rt.dgemm("N", "N", 80, 80, 80, 1.0, s, s, 0.0, sc)
        assert backend.calls == 1
        rt.close()

    def test_move_pages_failure_demotes_and_retries(self, monkeypatch):
        import blasoffload.interposer.runtime as rtmod

        failed_once = {}

        def fake_move(pages, page_size, node):
            if not failed_once:
                failed_once["done"] = pages[:2]
                return pages[:2]
            return []

        monkeypatch.setattr(rtmod, "_os_move_pages", fake_move)
        rt = make_runtime(migration=Migration.OS_MOVE_PAGES)
        a, b = fmat((520, 520)), fmat((520, 520))
        c = np.zeros((520, 520), order="F")
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        t1 = rt.stats()["totals"]
        assert t1["move_failures"] == 2
        moved_first = t1["bytes_moved"]
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        t2 = rt.stats()["totals"]
        # the two demoted pages migrate on the second call, nothing else
        assert t2["bytes_moved"] == moved_first + 2 * 4096
        rt.close()


class TestTraceCapture:
    def test_trace_replay_matches_live_decisions(self, tmp_path):
        path = str(tmp_path / "live.jsonl")
        rt = make_runtime(trace_path=path)
        a, b = fmat((520, 520)), fmat((520, 520))
        c = np.zeros((520, 520), order="F")
        small = fmat((90, 90))
        sc = np.zeros((90, 90), order="F")
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        rt.dgemm("N", "N", 90, 90, 90, 1.0, small, small, 0.0, sc)
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.9, c)
        live_offloaded = rt.stats()["totals"]["offloaded"]
        live_moved = rt.stats()["totals"]["bytes_moved"]
        rt.close()

        events = read_trace(path)
        assert len(events) == 3
        rep = simulate(events, Policy.FIRST_USE, threshold=500.0, page_size=4096)
        assert rep.calls_offloaded == live_offloaded
        assert rep.bytes_moved == live_moved
        assert sum(1 for e in events if e.decision == "offload") == live_offloaded

    def test_stats_sidecar_written(self, tmp_path, capsys):
        path = str(tmp_path / "live.jsonl")
        rt = make_runtime(trace_path=path)
        a, b = fmat((520, 520)), fmat((520, 520))
        c = np.zeros((520, 520), order="F")
        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
        rt.close()
        err = capsys.readouterr().err
        assert "blasoffload interposer" in err
        assert "dgemm" in err
        sidecar = json.load(open(path + ".stats.json"))
        assert sidecar["totals"]["intercepted"] == 1
        assert sidecar["totals"]["offloaded"] == 1
        assert sidecar["mode"] == "first_use"

    def test_close_is_idempotent(self, tmp_path):
        rt = make_runtime(trace_path=str(tmp_path / "t.jsonl"))
        a = fmat((64, 64))
        c = np.zeros((64, 64), order="F")
        rt.dgemm("N", "N", 64, 64, 64, 1.0, a, a, 0.0, c)
        rt.close()
        rt.close()


class TestThreading:
    def test_concurrent_calls_conserve_counts(self):
        rt = make_runtime()
        n_threads, per_thread = 4, 40
        errors = []

        def worker(tid):
            rng = np.random.default_rng(tid)
            a = np.asfortranarray(rng.standard_normal((520, 520)))
            b = np.asfortranarray(rng.standard_normal((520, 520)))
            c = np.zeros((520, 520), order="F")
            s = np.asfortranarray(rng.standard_normal((64, 64)))
            sc = np.zeros((64, 64), order="F")
            try:
                for i in range(per_thread):
                    if i % 4 == 0:
                        rt.dgemm("N", "N", 520, 520, 520, 1.0, a, b, 0.0, c)
                    else:
                        rt.dgemm("N", "N", 64, 64, 64, 1.0, s, s, 0.0, sc)
                np.testing.assert_allclose(c, a @ b, rtol=1e-9, atol=1e-12)
            except Exception as exc:  # propagated to the main thread
                errors.append(exc)

        threads = [threading.Thread(target=worker, args=(t,)) for t in range(n_threads)]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=60)
            assert not t.is_alive(), "worker deadlocked"
        assert not errors
        totals = rt.stats()["totals"]
        assert totals["intercepted"] == n_threads * per_thread
        assert totals["forwarded"] + totals["offloaded"] == totals["intercepted"]
        assert totals["offloaded"] == n_threads * 10
        rt.close()
