"""Data-placement policies at page granularity.

Three ways of getting operands to the device are modeled:

* mem-copy: stateless per-call staging copies in and out, the classic
  accelerator pattern.  No residency state survives the call.
* counter-emulated migration: a deterministic stand-in for the hardware
  access-counter mechanism that migrates an operand only when one kernel's
  worth of remote traffic already outweighs the migration cost.
* first-use migration: pages move to the device the first time a kernel
  touches them and never move back; later touches only bump a reuse
  counter.  This is the policy the package exists to study.

The residency map tracks pages in two domains, mirroring a unified-memory
system where host and device RAM are NUMA nodes of one address space.
Untracked pages are host-resident by definition, and a page can only ever
move host -> device, so the map stores device-resident page runs only.
Runs keep the map O(1) for the common whole-buffer touch; per-page
semantics are preserved by splitting runs on partial overlap.
"""

from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .model import BlasCall, Family, OperandSpan, Role

PAGE_SIZES = (4096, 65536)

# run layout: [start_page, stop_page, first_use_tick, reuse_count]
_START, _STOP, _TICK, _REUSE = 0, 1, 2, 3


class Domain(enum.Enum):
    HOST = "host"
    DEVICE = "device"


class MoveKind(enum.Enum):
    COPY_H2D = "copy_h2d"
    COPY_D2H = "copy_d2h"
    MIGRATE = "migrate"


@dataclass(frozen=True)
class MoveAction:
    """One planned transfer.  MIGRATE bytes are whole pages by construction."""

    kind: MoveKind
    bytes: int
    operand: int
    pages: Optional[tuple[int, int]] = None  # [first, stop) page run, MIGRATE only


@dataclass(frozen=True)
class MovementPlan:
    actions: tuple[MoveAction, ...]
    kernel_domain: Domain

    @property
    def bytes_h2d(self) -> int:
        return sum(a.bytes for a in self.actions if a.kind is MoveKind.COPY_H2D)

    @property
    def bytes_d2h(self) -> int:
        return sum(a.bytes for a in self.actions if a.kind is MoveKind.COPY_D2H)

    @property
    def migrated_bytes(self) -> int:
        return sum(a.bytes for a in self.actions if a.kind is MoveKind.MIGRATE)

    @property
    def total_bytes(self) -> int:
        return sum(a.bytes for a in self.actions)


def pages_of(span: OperandSpan, page_size: int) -> int:
    """Number of pages the span touches, including partial head and tail."""
    if page_size not in PAGE_SIZES:
        raise ValueError(f"page_size must be one of {PAGE_SIZES}")
    first = span.base // page_size
    last = (span.end - 1) // page_size
    return last - first + 1


class ResidencyMap:
    """Which pages live on the device, when they got there, how often reused.

    Pages not present in the map are host-resident.  Migration is one-way;
    there is deliberately no operation that returns a page to the host.
    """

    def __init__(self, page_size: int = 65536):
        if page_size not in PAGE_SIZES:
            raise ValueError(f"page_size must be one of {PAGE_SIZES}")
        self.page_size = page_size
        self._runs: list[list[int]] = []
        self._starts: list[int] = []  # kept parallel to _runs for bisect
        self.clock = 0

    # -- queries ----------------------------------------------------------

    def page_range(self, span: OperandSpan) -> tuple[int, int]:
        """[first, stop) page interval covering the span."""
        first = span.base // self.page_size
        stop = (span.end - 1) // self.page_size + 1
        return first, stop

    @property
    def device_pages(self) -> int:
        return sum(r[_STOP] - r[_START] for r in self._runs)

    @property
    def device_bytes(self) -> int:
        return self.device_pages * self.page_size

    def page_state(self, page: int) -> tuple[Domain, Optional[int], int]:
        """(domain, first_use_tick, reuse_count) for one page."""
        i = bisect_right(self._starts, page) - 1
        if i >= 0 and self._runs[i][_STOP] > page:
            r = self._runs[i]
            return (Domain.DEVICE, r[_TICK], r[_REUSE])
        return (Domain.HOST, None, 0)

    def device_runs(self, first: int, stop: int) -> Iterator[tuple[int, int]]:
        """Device-resident sub-runs of [first, stop), clipped."""
        i = bisect_right(self._starts, first) - 1
        if i < 0 or self._runs[i][_STOP] <= first:
            i += 1
        while i < len(self._runs) and self._runs[i][_START] < stop:
            r = self._runs[i]
            yield max(r[_START], first), min(r[_STOP], stop)
            i += 1

    def domain_bytes(self, span: OperandSpan) -> tuple[int, int]:
        """(host_bytes, device_bytes) split of the span's accessed bytes.

        Attribution is byte-accurate against page boundaries: only the part
        of the span inside device pages counts as device.
        """
        first, stop = self.page_range(span)
        dev = 0
        for a, b in self.device_runs(first, stop):
            lo = max(span.base, a * self.page_size)
            hi = min(span.end, b * self.page_size)
            if hi > lo:
                dev += hi - lo
        return span.accessed_bytes - dev, dev

    def is_fully_device(self, span: OperandSpan) -> bool:
        host, _ = self.domain_bytes(span)
        return host == 0

    # -- mutation ---------------------------------------------------------

    def _insert_run(self, idx: int, start: int, stop: int, tick: int, reuse: int):
        self._runs.insert(idx, [start, stop, tick, reuse])
        self._starts.insert(idx, start)

    def first_use_touch(self, first: int, stop: int, tick: int) -> list[tuple[int, int]]:
        """Touch [first, stop) from the device.

        Host pages in the interval migrate (they join the map with the given
        first_use_tick and a zero reuse count); pages already device-resident
        get their reuse count incremented.  Returns the newly migrated runs.
        """
        if stop <= first:
            return []
        new_runs: list[tuple[int, int]] = []
        i = bisect_right(self._starts, first) - 1
        if i < 0 or self._runs[i][_STOP] <= first:
            i += 1
        cursor = first
        while cursor < stop:
            if i >= len(self._runs) or self._runs[i][_START] >= stop:
                # pure gap to the end of the interval
                new_runs.append((cursor, stop))
                self._insert_run(i, cursor, stop, tick, 0)
                i += 1
                cursor = stop
                break
            r = self._runs[i]
            if r[_START] > cursor:
                # gap before the next run
                gap_stop = min(r[_START], stop)
                new_runs.append((cursor, gap_stop))
                self._insert_run(i, cursor, gap_stop, tick, 0)
                i += 1
                cursor = gap_stop
                continue
            # cursor sits inside run r; split off any prefix outside [first,stop)
            if r[_START] < cursor:
                tail = [cursor, r[_STOP], r[_TICK], r[_REUSE]]
                r[_STOP] = cursor
                i += 1
                self._runs.insert(i, tail)
                self._starts.insert(i, cursor)
                r = self._runs[i]
            if r[_STOP] > stop:
                tail = [stop, r[_STOP], r[_TICK], r[_REUSE]]
                r[_STOP] = stop
                self._runs.insert(i + 1, tail)
                self._starts.insert(i + 1, stop)
            r[_REUSE] += 1
            cursor = r[_STOP]
            i += 1
        return new_runs

    def migrate_span(self, span: OperandSpan, tick: int) -> list[MoveAction]:
        """First-use touch of a span; returns MIGRATE actions for new pages."""
        first, stop = self.page_range(span)
        runs = self.first_use_touch(first, stop, tick)
        return [
            MoveAction(
                kind=MoveKind.MIGRATE,
                bytes=(b - a) * self.page_size,
                operand=-1,
                pages=(a, b),
            )
            for a, b in runs
        ]

    def demote(self, first: int, stop: int) -> None:
        """Mark [first, stop) host-resident again.

        Mechanism escape hatch for the live interposer when the OS refuses
        to move a page; no policy planner ever calls this, preserving the
        one-way migration property of the policies themselves.
        """
        if stop <= first:
            return
        i = bisect_right(self._starts, first) - 1
        if i < 0 or self._runs[i][_STOP] <= first:
            i += 1
        while i < len(self._runs) and self._runs[i][_START] < stop:
            r = self._runs[i]
            if r[_START] < first:
                tail = [first, r[_STOP], r[_TICK], r[_REUSE]]
                r[_STOP] = first
                i += 1
                self._runs.insert(i, tail)
                self._starts.insert(i, first)
                r = self._runs[i]
            if r[_STOP] > stop:
                tail = [stop, r[_STOP], r[_TICK], r[_REUSE]]
                self._runs[i] = tail
                self._starts[i] = stop
                return
            del self._runs[i]
            del self._starts[i]


# ---------------------------------------------------------------------------
# counter-based migration emulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CounterEmulatorConfig:
    """Calibrated stand-in for the hardware access-counter policy.

    The decision horizon is a single kernel: an operand migrates only when
    the remote read traffic of one kernel launch, priced per byte, already
    exceeds its one-time migration cost.  Reads per input operand are
    estimated as (opposing result dimension / tile_edge) passes, left
    unclamped below one pass on purpose: an operand the kernel streams at
    most once offers the counter mechanism almost nothing to amortize.
    Small call footprints migrate wholesale, and migration per kernel is
    capped by a byte budget consumed in operand order by every operand's
    footprint, migrated or not (which keeps the decision monotone in
    remote_penalty_per_byte).
    """

    migration_cost_per_byte: float = 2.2e-12
    remote_penalty_per_byte: float = 5.5e-12
    tile_edge: int = 256
    small_footprint_bytes: int = 64 * 1024 * 1024
    migration_budget_bytes: int = 4 * 1024 * 1024 * 1024
    benefit_horizon: str = "single_kernel"
    per_operand_decision: bool = True

    def __post_init__(self) -> None:
        if self.migration_cost_per_byte <= 0 or self.remote_penalty_per_byte <= 0:
            raise ValueError("per-byte rates must be positive")
        if self.tile_edge < 1:
            raise ValueError("tile_edge must be >= 1")
        if self.benefit_horizon != "single_kernel":
            raise ValueError("only the single_kernel horizon is modeled")


def _read_passes(call: BlasCall, operand: int) -> float:
    """Single-kernel read passes the kernel makes over one operand.

    Inputs are re-read once per tile row or column of the result that
    consumes them; the result operand is read at most once, and only when
    beta keeps its old contents alive.
    """
    m, n = call.m, call.n
    f = call.family
    last = len(call.operands) - 1
    role = call.operands[operand].role
    if role in (Role.OUTPUT, Role.INOUT) and operand == last:
        if f in (Family.TRMM, Family.TRSM):
            return 1.0  # B is rewritten in place but read regardless of beta
        return 1.0 if call.beta != 0 else 0.0
    if f is Family.GEMM:
        return float(n) if operand == 0 else float(m)
    if f in (Family.SYMM, Family.HEMM):
        left = call.side is not None and call.side.value == "L"
        if operand == 0:
            return float(n) if left else float(m)
        return float(m) if left else float(n)
    if f in (Family.SYRK, Family.HERK, Family.SYR2K, Family.HER2K):
        return float(n)
    if f in (Family.TRMM, Family.TRSM):
        left = call.side is not None and call.side.value == "L"
        return float(n) if left else float(m)
    raise ValueError(f"unknown family {f}")


def counter_decisions(call: BlasCall, cfg: CounterEmulatorConfig) -> list[bool]:
    """Per-operand migrate/stay decisions, in operand order."""
    footprint = sum(op.accessed_bytes for op in call.operands)
    if footprint <= cfg.small_footprint_bytes:
        return [True] * len(call.operands)
    ratio = cfg.migration_cost_per_byte / cfg.remote_penalty_per_byte
    decisions = []
    cumulative = 0
    for i, op in enumerate(call.operands):
        cumulative += op.accessed_bytes
        passes = _read_passes(call, i) / cfg.tile_edge
        wants = passes > ratio
        decisions.append(wants and cumulative <= cfg.migration_budget_bytes)
    return decisions


# ---------------------------------------------------------------------------
# planners
# ---------------------------------------------------------------------------


def plan_memcopy(call: BlasCall) -> MovementPlan:
    """Stateless staging plan: inputs in, outputs back, nothing remembered.

    INOUT operands travel both ways.  An OUTPUT operand with beta == 0 is
    not copied in; its old contents cannot matter.
    """
    actions: list[MoveAction] = []
    for i, op in enumerate(call.operands):
        if op.role in (Role.INPUT, Role.INOUT):
            actions.append(MoveAction(MoveKind.COPY_H2D, op.accessed_bytes, i))
    for i, op in enumerate(call.operands):
        if op.role in (Role.OUTPUT, Role.INOUT):
            actions.append(MoveAction(MoveKind.COPY_D2H, op.accessed_bytes, i))
    return MovementPlan(actions=tuple(actions), kernel_domain=Domain.DEVICE)


def _tick_for(rmap: ResidencyMap, tick: Optional[int]) -> int:
    if tick is None:
        tick = rmap.clock
    rmap.clock = max(rmap.clock, tick) + 1
    return tick


def plan_first_use(
    call: BlasCall, rmap: ResidencyMap, tick: Optional[int] = None
) -> tuple[MovementPlan, ResidencyMap]:
    """Migrate every host page the call touches; never plan a copy back.

    Pages already on the device contribute no bytes and get their reuse
    counter bumped, so the second identical call produces an empty plan.
    The map is updated in place and returned for call-chaining.
    """
    t = _tick_for(rmap, tick)
    actions: list[MoveAction] = []
    for i, op in enumerate(call.operands):
        first, stop = rmap.page_range(op)
        for a, b in rmap.first_use_touch(first, stop, t):
            actions.append(
                MoveAction(MoveKind.MIGRATE, (b - a) * rmap.page_size, i, (a, b))
            )
    return MovementPlan(tuple(actions), Domain.DEVICE), rmap


def plan_counter_emulated(
    call: BlasCall,
    rmap: ResidencyMap,
    cfg: CounterEmulatorConfig = CounterEmulatorConfig(),
    tick: Optional[int] = None,
) -> tuple[MovementPlan, ResidencyMap]:
    """Migrate only operands whose single-kernel benefit clears the bar.

    Operands that stay host-resident are accessed remotely by the kernel;
    the migration traffic of the chosen ones happens during the kernel, so
    callers fold its time into kernel time rather than listing it as a
    separate movement phase.
    """
    t = _tick_for(rmap, tick)
    decisions = counter_decisions(call, cfg)
    actions: list[MoveAction] = []
    for i, op in enumerate(call.operands):
        if not decisions[i]:
            continue
        first, stop = rmap.page_range(op)
        for a, b in rmap.first_use_touch(first, stop, t):
            actions.append(
                MoveAction(MoveKind.MIGRATE, (b - a) * rmap.page_size, i, (a, b))
            )
    return MovementPlan(tuple(actions), Domain.DEVICE), rmap


def plan_cpu(call: BlasCall) -> MovementPlan:
    """CPU execution plans no movement and leaves residency untouched."""
    return MovementPlan(actions=(), kernel_domain=Domain.HOST)
