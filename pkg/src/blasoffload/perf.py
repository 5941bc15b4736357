"""Trace-driven performance model: what would this call sequence cost
under each data-placement policy?

The kernel model is a roofline with one twist.  Local work is the familiar
max(flop time, memory time).  Work against remote (host-resident) memory
does not behave like a bandwidth-limited stream on real C2C hardware: a
square multiply out of host RAM runs ~24x slower than out of device RAM
while only moving 14x fewer bytes than a skinny one, so no bytes/bandwidth
term alone can describe both.  Remote traffic therefore adds an additive
term: flops * remote_drag * (remote share of traffic) plus remote bytes at
an effective remote bandwidth.  Both constants are calibrated, not meant
as microarchitectural truth.

Device kernels on migrated system-allocated memory pay a multiplicative
unaligned_penalty unless every device-resident operand base is page
aligned; staged copies (mem-copy policy) use allocator-aligned device
buffers and never pay it.

All results are deterministic: same trace, model and options give
byte-identical reports.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Sequence

from .model import BlasCall, OperandSpan, Role, flops, should_offload
from .policy import (
    CounterEmulatorConfig,
    Domain,
    MovementPlan,
    MoveKind,
    ResidencyMap,
    plan_counter_emulated,
    plan_first_use,
    plan_memcopy,
)
from .traceio import TraceEvent

GB = 1e9

DEFAULT_THRESHOLD = 500.0
DEFAULT_PAGE_SIZE = 65536


class Policy(enum.Enum):
    CPU_ONLY = "cpu_only"
    MEMCOPY = "memcopy"
    COUNTER = "counter"
    FIRST_USE = "first_use"


class SimulationError(RuntimeError):
    """Raised for malformed traces and capacity overflows; carries the seq."""

    def __init__(self, seq: Optional[int], message: str):
        prefix = f"event seq={seq}: " if seq is not None else ""
        super().__init__(prefix + message)
        self.seq = seq


@dataclass(frozen=True)
class CostModel:
    """Calibration constants.  Bandwidths in GB/s, latencies in seconds.

    Field defaults carry measured STREAM-triad numbers for the platform
    class; the packaged calibration file overrides the device-side
    bandwidths with gemm-effective values and supplies remote_drag.  Use
    CostModel.load() for the calibrated set.
    """

    bw_h2d: float = 450.0
    bw_d2h: float = 450.0
    bw_host_local: float = 418.0
    bw_device_local: float = 3679.0
    bw_device_remote: float = 474.0
    bw_host_device_mem: float = 142.0
    page_migration_latency: float = 2e-6
    copy_latency: float = 1e-5
    kernel_efficiency: float = 0.9479628882613955
    peak_flops_device: float = 67e12
    peak_flops_host: float = 3309470171047.1426
    unaligned_penalty: float = 1.46875
    remote_drag: float = 0.0

    def __post_init__(self) -> None:
        for name in (
            "bw_h2d",
            "bw_d2h",
            "bw_host_local",
            "bw_device_local",
            "bw_device_remote",
            "bw_host_device_mem",
            "peak_flops_device",
            "peak_flops_host",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.kernel_efficiency <= 1:
            raise ValueError("kernel_efficiency must be in (0, 1]")
        if self.unaligned_penalty < 1:
            raise ValueError("unaligned_penalty must be >= 1")
        if self.remote_drag < 0 or self.page_migration_latency < 0 or self.copy_latency < 0:
            raise ValueError("latencies and drag must be non-negative")

    @classmethod
    def from_dict(cls, obj: dict) -> "CostModel":
        fields = {k: v for k, v in obj.items() if k not in ("version", "description")}
        return cls(**fields)

    @classmethod
    def load(cls, path: Optional[str] = None) -> "CostModel":
        """Load a calibration file; None loads the packaged defaults."""
        if path is None:
            text = (
                resources.files("blasoffload")
                .joinpath("defaults/calibration.json")
                .read_text()
            )
        else:
            with open(path) as fh:
                text = fh.read()
        return cls.from_dict(json.loads(text))


def packaged_calibration_path() -> str:
    """Filesystem path of the shipped calibration defaults."""
    return str(resources.files("blasoffload").joinpath("defaults/calibration.json"))


def _traffic_weight(role: Role) -> int:
    # outputs are read-modify-written; inputs stream once
    return 2 if role in (Role.OUTPUT, Role.INOUT) else 1


def kernel_time(
    call: BlasCall,
    model: CostModel,
    *,
    kernel_domain: Domain,
    splits: Sequence[tuple[int, int]],
    page_size: int = DEFAULT_PAGE_SIZE,
    staged: bool = False,
) -> float:
    """Seconds one kernel launch takes.

    Parameters
    ----------
    splits : sequence of (host_bytes, device_bytes)
        Residency split of each operand's accessed bytes, in operand order.
        Ignored when staged=True, which models kernels running on aligned
        device-local staging buffers (the mem-copy path).
    """
    fl = flops(call)
    if kernel_domain is Domain.DEVICE:
        rate = model.peak_flops_device * model.kernel_efficiency
        flop_t = fl / rate
        local = 0.0
        remote = 0.0
        total = 0.0
        unaligned = False
        for op, (host_b, dev_b) in zip(call.operands, splits):
            w = _traffic_weight(op.role)
            traffic = float(w * op.accessed_bytes)
            total += traffic
            if staged:
                local += traffic
                continue
            dev_frac = dev_b / op.accessed_bytes
            local += traffic * dev_frac
            remote += traffic * (1.0 - dev_frac)
            if dev_b > 0 and op.base % page_size != 0:
                unaligned = True
        base = max(flop_t, local / (model.bw_device_local * GB))
        if unaligned and not staged:
            base *= model.unaligned_penalty
        if remote > 0.0:
            base += fl * model.remote_drag * (remote / total)
            base += remote / (model.bw_device_remote * GB)
        return base
    # host kernel: device-resident bytes are reachable, just slow
    rate = model.peak_flops_host * model.kernel_efficiency
    flop_t = fl / rate
    mem = 0.0
    for op, (host_b, dev_b) in zip(call.operands, splits):
        w = _traffic_weight(op.role)
        dev_frac = dev_b / op.accessed_bytes
        traffic = float(w * op.accessed_bytes)
        mem += traffic * (1.0 - dev_frac) / (model.bw_host_local * GB)
        mem += traffic * dev_frac / (model.bw_host_device_mem * GB)
    return max(flop_t, mem)


def movement_time(plan: MovementPlan, model: CostModel) -> float:
    """Seconds of explicit data movement a plan costs.

    Copies pay copy_latency per transfer; migrations pay
    page_migration_latency per contiguous page run.
    """
    t = 0.0
    for action in plan.actions:
        if action.kind is MoveKind.COPY_H2D:
            t += action.bytes / (model.bw_h2d * GB) + model.copy_latency
        elif action.kind is MoveKind.COPY_D2H:
            t += action.bytes / (model.bw_d2h * GB) + model.copy_latency
        else:
            t += action.bytes / (model.bw_h2d * GB) + model.page_migration_latency
    return t


@dataclass(frozen=True)
class PolicyReport:
    """One policy's totals over a trace, mirroring an end-of-run statistics
    table: where time went, what moved, and how often device-resident
    buffers were reused."""

    policy: Policy
    events: int
    calls_offloaded: int
    calls_kept_on_cpu: int
    blas_time: float
    data_movement_time: float
    movement_included_in_blas: bool
    bytes_moved: int
    per_buffer_reuse: dict[str, int]
    mean_reuse: float
    threshold: float
    page_size: int

    @property
    def total_time(self) -> float:
        return self.blas_time + self.data_movement_time

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.value,
            "events": self.events,
            "calls_offloaded": self.calls_offloaded,
            "calls_kept_on_cpu": self.calls_kept_on_cpu,
            "blas_time_s": self.blas_time,
            "data_movement_time_s": self.data_movement_time,
            "movement_included_in_blas": self.movement_included_in_blas,
            "total_time_s": self.total_time,
            "bytes_moved": self.bytes_moved,
            "mean_reuse": self.mean_reuse,
            "per_buffer_reuse": self.per_buffer_reuse,
            "threshold": self.threshold,
            "page_size": self.page_size,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyReport":
        return cls(
            policy=Policy(d["policy"]),
            events=int(d["events"]),
            calls_offloaded=int(d["calls_offloaded"]),
            calls_kept_on_cpu=int(d["calls_kept_on_cpu"]),
            blas_time=float(d["blas_time_s"]),
            data_movement_time=float(d["data_movement_time_s"]),
            movement_included_in_blas=bool(d["movement_included_in_blas"]),
            bytes_moved=int(d["bytes_moved"]),
            per_buffer_reuse={str(k): int(v) for k, v in d["per_buffer_reuse"].items()},
            mean_reuse=float(d["mean_reuse"]),
            threshold=float(d["threshold"]),
            page_size=int(d["page_size"]),
        )


def _buffer_key(span: OperandSpan) -> tuple[int, int]:
    return (span.base, span.accessed_bytes)


def _validate_events(events: Sequence[TraceEvent]) -> None:
    if not events:
        raise SimulationError(None, "empty trace")
    for ev in events:
        try:
            ev.call.validate()
        except ValueError as exc:
            raise SimulationError(ev.seq, str(exc)) from None


def simulate(
    events: Sequence[TraceEvent],
    policy: Policy,
    model: Optional[CostModel] = None,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    page_size: int = DEFAULT_PAGE_SIZE,
    capacity_bytes: Optional[int] = None,
    counter_cfg: Optional[CounterEmulatorConfig] = None,
) -> PolicyReport:
    """Replay a trace under one policy and account every second and byte.

    One residency map lives across the whole trace for the stateful
    policies.  The trace is validated up front; the first malformed call
    rejects the whole run.  Exceeding capacity_bytes of device memory
    raises SimulationError naming the first overflowing event.
    """
    _validate_events(events)
    if model is None:
        model = CostModel.load()
    if counter_cfg is None:
        counter_cfg = CounterEmulatorConfig()
    stateful = policy in (Policy.COUNTER, Policy.FIRST_USE)
    rmap = ResidencyMap(page_size) if stateful else None

    blas = 0.0
    movement = 0.0
    bytes_moved = 0
    offloaded = 0
    kept = 0
    resident: set[tuple[int, int]] = set()
    reuse: dict[tuple[int, int], int] = {}

    def splits_of(call: BlasCall) -> list[tuple[int, int]]:
        if rmap is None:
            return [(op.accessed_bytes, 0) for op in call.operands]
        return [rmap.domain_bytes(op) for op in call.operands]

    for ev in events:
        call = ev.call
        if policy is Policy.CPU_ONLY or not should_offload(call, threshold):
            kept += 1
            blas += kernel_time(
                call,
                model,
                kernel_domain=Domain.HOST,
                splits=splits_of(call),
                page_size=page_size,
            )
            continue

        offloaded += 1
        keys = {_buffer_key(op) for op in call.operands}
        for key in keys:
            if key in resident:
                reuse[key] += 1

        if policy is Policy.MEMCOPY:
            plan = plan_memcopy(call)
            movement += movement_time(plan, model)
            bytes_moved += plan.total_bytes
            blas += kernel_time(
                call,
                model,
                kernel_domain=Domain.DEVICE,
                splits=splits_of(call),
                page_size=page_size,
                staged=True,
            )
            if capacity_bytes is not None:
                staged_footprint = sum(op.accessed_bytes for op in call.operands)
                if staged_footprint > capacity_bytes:
                    raise SimulationError(
                        ev.seq,
                        f"staged device footprint {staged_footprint} exceeds "
                        f"capacity {capacity_bytes}",
                    )
        elif policy is Policy.FIRST_USE:
            assert rmap is not None
            plan, rmap = plan_first_use(call, rmap, tick=ev.seq)
            movement += movement_time(plan, model)
            bytes_moved += plan.migrated_bytes
            blas += kernel_time(
                call,
                model,
                kernel_domain=Domain.DEVICE,
                splits=splits_of(call),
                page_size=page_size,
            )
        else:  # Policy.COUNTER
            assert rmap is not None
            pre_splits = splits_of(call)
            plan, rmap = plan_counter_emulated(call, rmap, counter_cfg, tick=ev.seq)
            # migration overlaps the kernel: charge it inside blas time
            blas += movement_time(plan, model)
            blas += kernel_time(
                call,
                model,
                kernel_domain=Domain.DEVICE,
                splits=pre_splits,
                page_size=page_size,
            )
            bytes_moved += plan.migrated_bytes

        if stateful:
            assert rmap is not None
            for key, op in {(_buffer_key(op), op) for op in call.operands}:
                if key not in resident and rmap.is_fully_device(op):
                    resident.add(key)
                    reuse.setdefault(key, 0)
            if capacity_bytes is not None and rmap.device_bytes > capacity_bytes:
                raise SimulationError(
                    ev.seq,
                    f"device residency {rmap.device_bytes} exceeds "
                    f"capacity {capacity_bytes}",
                )

    folded = policy is Policy.COUNTER
    per_buffer = {
        f"0x{base:x}:{nbytes}": count
        for (base, nbytes), count in sorted(reuse.items())
    }
    mean = sum(reuse.values()) / len(reuse) if reuse else 0.0
    return PolicyReport(
        policy=policy,
        events=len(events),
        calls_offloaded=offloaded,
        calls_kept_on_cpu=kept,
        blas_time=blas,
        data_movement_time=0.0 if folded else movement,
        movement_included_in_blas=folded,
        bytes_moved=bytes_moved,
        per_buffer_reuse=per_buffer,
        mean_reuse=mean,
        threshold=threshold,
        page_size=page_size,
    )


def compare(
    events: Sequence[TraceEvent],
    model: Optional[CostModel] = None,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    page_size: int = DEFAULT_PAGE_SIZE,
    capacity_bytes: Optional[int] = None,
    counter_cfg: Optional[CounterEmulatorConfig] = None,
) -> list[PolicyReport]:
    """Replay the trace under all four policies, fresh state for each."""
    return [
        simulate(
            events,
            policy,
            model,
            threshold=threshold,
            page_size=page_size,
            capacity_bytes=capacity_bytes,
            counter_cfg=counter_cfg,
        )
        for policy in Policy
    ]


def fastest(reports: Sequence[PolicyReport]) -> PolicyReport:
    return min(reports, key=lambda r: r.total_time)
