import random

import pytest

from blasoffload.model import (
    Family,
    OperandSpan,
    Precision,
    Role,
    Side,
    Trans,
    Uplo,
    assemble_call,
    operand_bytes,
)
from blasoffload.policy import (
    CounterEmulatorConfig,
    Domain,
    MoveKind,
    PAGE_SIZES,
    ResidencyMap,
    counter_decisions,
    pages_of,
    plan_counter_emulated,
    plan_cpu,
    plan_first_use,
    plan_memcopy,
)

from conftest import Arena, gemm


def span(base, nbytes, role=Role.INPUT):
    return OperandSpan(base=base, rows=nbytes // 8, cols=1, ld=nbytes // 8, elem_bytes=8, role=role)


def test_page_sizes_frozen():
    assert PAGE_SIZES == (4096, 65536)


def test_pages_of_aligned():
    # 93536 x 2400 doubles, the skinny trace's big input
    s = OperandSpan(0x10000000, 93536, 2400, 93536, 8, Role.INPUT)
    assert operand_bytes(s) == 1_795_891_200
    assert pages_of(s, 65536) == 27_404
    assert pages_of(s, 4096) == 438_450


def test_pages_of_unaligned_base_adds_page():
    s = OperandSpan(0x10000000 + 24, 65536 // 8, 1, 65536 // 8, 8, Role.INPUT)
    # one page of payload straddling a boundary occupies two pages
    assert pages_of(s, 65536) == 2
    aligned = OperandSpan(0x10000000, 65536 // 8, 1, 65536 // 8, 8, Role.INPUT)
    assert pages_of(aligned, 65536) == 1


def test_first_use_touch_exactly_once():
    r = ResidencyMap(page_size=4096)
    assert r.first_use_touch(10, 14, tick=0) == [(10, 14)]
    assert r.first_use_touch(10, 14, tick=1) == []
    assert r.first_use_touch(12, 16, tick=2) == [(14, 16)]
    assert r.device_pages == 6
    assert r.device_bytes == 6 * 4096


def test_page_state_tracks_tick_and_reuse():
    r = ResidencyMap(page_size=4096)
    r.first_use_touch(5, 8, tick=3)
    dom, tick, reuse = r.page_state(5)
    assert dom is Domain.DEVICE and tick == 3 and reuse == 0
    r.first_use_touch(5, 6, tick=4)
    assert r.page_state(5)[2] == 1
    assert r.page_state(4)[0] is Domain.HOST


def test_runs_cover_adjacent_touches():
    # runs may stay segmented (each carries its own tick/reuse); the
    # contract is gap-free, overlap-free coverage
    r = ResidencyMap(page_size=4096)
    r.first_use_touch(0, 4, tick=0)
    r.first_use_touch(4, 8, tick=0)
    runs = list(r.device_runs(0, 100))
    covered = sorted(p for lo, hi in runs for p in range(lo, hi))
    assert covered == list(range(8))
    assert r.device_pages == 8


def test_demote_reopens_pages():
    r = ResidencyMap(page_size=4096)
    r.first_use_touch(0, 10, tick=0)
    r.demote(3, 5)
    assert r.device_pages == 8
    assert r.page_state(3)[0] is Domain.HOST
    assert r.page_state(2)[0] is Domain.DEVICE
    assert r.page_state(5)[0] is Domain.DEVICE
    # demoted pages migrate again on next touch, others do not
    assert r.first_use_touch(0, 10, tick=1) == [(3, 5)]


def test_domain_bytes_split():
    r = ResidencyMap(page_size=4096)
    s = span(0, 8 * 4096)
    r.first_use_touch(0, 4, tick=0)
    host_b, dev_b = r.domain_bytes(s)
    assert dev_b == 4 * 4096
    assert host_b + dev_b == operand_bytes(s)
    assert not r.is_fully_device(s)
    r.first_use_touch(4, 8, tick=1)
    assert r.is_fully_device(s)


def test_plan_cpu_moves_nothing():
    call = gemm(1000, 1000, 1000, arena=Arena())
    plan = plan_cpu(call)
    assert plan.actions == ()
    assert plan.kernel_domain is Domain.HOST
    assert plan.total_bytes == 0


def test_plan_memcopy_roles():
    call = gemm(100, 200, 300, beta=0.0, arena=Arena())
    plan = plan_memcopy(call)
    kinds = [(a.kind, a.bytes) for a in plan.actions]
    a_b, b_b, c_b = (operand_bytes(op) for op in call.operands)
    # beta == 0: C is write-only, copied out but never in
    assert (MoveKind.COPY_H2D, a_b) in kinds
    assert (MoveKind.COPY_H2D, b_b) in kinds
    assert (MoveKind.COPY_D2H, c_b) in kinds
    assert (MoveKind.COPY_H2D, c_b) not in kinds
    assert plan.total_bytes == a_b + b_b + c_b
    assert plan.kernel_domain is Domain.DEVICE


def test_plan_memcopy_inout_copies_both_ways():
    call = gemm(100, 200, 300, beta=0.5, arena=Arena())
    plan = plan_memcopy(call)
    c_b = operand_bytes(call.operands[2])
    h2d = sum(a.bytes for a in plan.actions if a.kind is MoveKind.COPY_H2D)
    d2h = sum(a.bytes for a in plan.actions if a.kind is MoveKind.COPY_D2H)
    assert d2h == c_b
    assert h2d == plan.total_bytes - c_b
    assert plan.bytes_h2d == h2d and plan.bytes_d2h == d2h


def test_plan_memcopy_is_stateless():
    call = gemm(64, 64, 64, arena=Arena())
    assert plan_memcopy(call).total_bytes == plan_memcopy(call).total_bytes


def test_plan_first_use_migrates_then_reuses():
    arena = Arena()
    call = gemm(512, 512, 512, arena=arena)
    rmap = ResidencyMap(page_size=65536)
    plan1, rmap = plan_first_use(call, rmap, tick=0)
    expected = sum(pages_of(op, 65536) for op in call.operands) * 65536
    assert plan1.migrated_bytes == expected
    assert all(a.kind is MoveKind.MIGRATE for a in plan1.actions)
    assert plan1.kernel_domain is Domain.DEVICE
    plan2, rmap = plan_first_use(call, rmap, tick=1)
    assert plan2.total_bytes == 0


def test_plan_first_use_partial_overlap():
    # two calls sharing operand A: only the non-shared pages move twice
    arena = Arena()
    a = arena.take(512 * 512 * 8)
    b1, c1 = arena.take(512 * 512 * 8), arena.take(512 * 512 * 8)
    b2, c2 = arena.take(512 * 512 * 8), arena.take(512 * 512 * 8)
    call1 = gemm(512, 512, 512, bases=(a, b1, c1))
    call2 = gemm(512, 512, 512, bases=(a, b2, c2))
    rmap = ResidencyMap(page_size=65536)
    plan1, rmap = plan_first_use(call1, rmap, tick=0)
    plan2, rmap = plan_first_use(call2, rmap, tick=1)
    pages_a = pages_of(call1.operands[0], 65536)
    assert plan2.migrated_bytes == plan1.migrated_bytes - pages_a * 65536


def test_first_use_never_migrates_back():
    rng = random.Random(5)
    arena = Arena()
    pool = [arena.take(256 * 256 * 8) for _ in range(9)]
    rmap = ResidencyMap(page_size=4096)
    seen = set()
    for tick in range(60):
        bases = tuple(rng.choice(pool) for _ in range(3))
        if len(set(bases)) < 3:
            continue
        call = gemm(256, 256, 256, bases=bases)
        plan, rmap = plan_first_use(call, rmap, tick=tick)
        for act in plan.actions:
            assert act.kind is MoveKind.MIGRATE
            lo, hi = act.pages
            for p in range(lo, hi):
                assert p not in seen, "page migrated twice"
                seen.add(p)
    assert rmap.device_pages == len(seen)


def test_exactly_once_against_set_oracle():
    rng = random.Random(17)
    for case in range(100):
        arena = Arena()
        pool = [arena.take(rng.randint(40, 600) * 1024) for _ in range(6)]
        rmap = ResidencyMap(page_size=4096)
        oracle: set[int] = set()
        total = 0
        for tick in range(rng.randint(3, 25)):
            d = rng.randint(32, 256)
            bases = tuple(rng.sample(pool, 3))
            call = gemm(d, d, d, bases=bases, arena=None)
            plan, rmap = plan_first_use(call, rmap, tick=tick)
            total += plan.migrated_bytes
            for op in call.operands:
                first = op.base // 4096
                stop = (op.end - 1) // 4096 + 1
                oracle.update(range(first, stop))
        assert total == len(oracle) * 4096, f"case {case}"
        assert rmap.device_pages == len(oracle)


def test_counter_table_decisions():
    cfg = CounterEmulatorConfig()
    rows = [
        ((1000, 1000, 1000), [True, True, True]),
        ((5000, 5000, 5000), [True, True, False]),
        ((20000, 20000, 20000), [True, False, False]),
        ((32, 2400, 93536), [True, False, False]),
    ]
    arena = Arena()
    for (m, n, k), want in rows:
        call = gemm(m, n, k, arena=arena)
        assert counter_decisions(call, cfg) == want, (m, n, k)


def test_counter_more_penalty_more_migration():
    call = gemm(5000, 5000, 5000, arena=Arena())
    base = CounterEmulatorConfig()
    decided = counter_decisions(call, base)
    cranked = CounterEmulatorConfig(remote_penalty_per_byte=base.remote_penalty_per_byte * 100)
    more = counter_decisions(call, cranked)
    assert sum(more) >= sum(decided)
    assert all(not (d and not m) for d, m in zip(decided, more))


def test_counter_plan_folds_movement():
    call = gemm(1000, 1000, 1000, arena=Arena())
    rmap = ResidencyMap(page_size=65536)
    plan, rmap = plan_counter_emulated(call, rmap, tick=0)
    assert plan.kernel_domain is Domain.DEVICE
    assert plan.migrated_bytes > 0
    plan2, rmap = plan_counter_emulated(call, rmap, tick=1)
    assert plan2.migrated_bytes == 0


def test_counter_keeps_unmigrated_operand_remote():
    # 20000^3: only A migrates; B and C stay host-resident
    call = gemm(2000, 2000, 2000, bases=(0x10000000, 0x80000000, 0xF0000000))
    cfg = CounterEmulatorConfig()
    decisions = counter_decisions(call, cfg)
    rmap = ResidencyMap(page_size=65536)
    plan, rmap = plan_counter_emulated(call, rmap, cfg, tick=0)
    migrated = {a.operand for a in plan.actions}
    assert migrated == {i for i, d in enumerate(decisions) if d}


def test_migrate_span_action_pages_cover_span():
    r = ResidencyMap(page_size=4096)
    s = span(10 * 4096 + 100, 3 * 4096)
    actions = r.migrate_span(s, tick=0)
    covered = set()
    for act in actions:
        lo, hi = act.pages
        covered.update(range(lo, hi))
    first, stop = r.page_range(s)
    assert covered == set(range(first, stop))
    assert sum(a.bytes for a in actions) == len(covered) * 4096
