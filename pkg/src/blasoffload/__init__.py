"""Decide, plan, and cost level-3 BLAS offload to a cache-coherent device.

The package splits the problem into layers that stand alone:

* model: call descriptions, operand spans, flop and byte accounting,
  and the size gate that decides which calls are worth offloading.
* policy: data placement planners (staging copies, counter-guided
  migration, migrate-on-first-touch) over a page residency map.
* perf: calibrated roofline cost model and trace replay that turns a
  call trace plus a policy into a time and movement report.
* traceio: the line-delimited JSON trace format shared by the replay
  tools and the live interposer.
* workloads: deterministic synthetic traces with solver-like reuse.
* interposer: in-process runtime and an LD_PRELOAD shim that intercept
  Fortran BLAS symbols, apply the gate, and record traces.
"""

from .model import (
    DEFAULT_THRESHOLD,
    BlasCall,
    Family,
    OperandSpan,
    Precision,
    Role,
    Side,
    Trans,
    Uplo,
    assemble_call,
    dominant_dims,
    flops,
    navg,
    should_offload,
)
from .perf import CostModel, Policy, PolicyReport, SimulationError, compare, fastest, simulate
from .policy import (
    PAGE_SIZES,
    CounterEmulatorConfig,
    Domain,
    MoveAction,
    MoveKind,
    MovementPlan,
    ResidencyMap,
    counter_decisions,
    pages_of,
    plan_counter_emulated,
    plan_cpu,
    plan_first_use,
    plan_memcopy,
)
from .traceio import TraceEvent, TraceFormatError, read_trace, write_trace
from .workloads import Pattern, RecipeError, WorkloadRecipe, gen_trace, recipe

__version__ = "0.1.0"

__all__ = [
    "BlasCall",
    "CostModel",
    "CounterEmulatorConfig",
    "DEFAULT_THRESHOLD",
    "Domain",
    "Family",
    "MoveAction",
    "MoveKind",
    "MovementPlan",
    "OperandSpan",
    "PAGE_SIZES",
    "Pattern",
    "Policy",
    "PolicyReport",
    "Precision",
    "RecipeError",
    "ResidencyMap",
    "Role",
    "Side",
    "SimulationError",
    "TraceEvent",
    "TraceFormatError",
    "Trans",
    "Uplo",
    "WorkloadRecipe",
    "assemble_call",
    "compare",
    "counter_decisions",
    "dominant_dims",
    "fastest",
    "flops",
    "gen_trace",
    "navg",
    "pages_of",
    "plan_counter_emulated",
    "plan_cpu",
    "plan_first_use",
    "plan_memcopy",
    "read_trace",
    "recipe",
    "should_offload",
    "simulate",
    "write_trace",
    "__version__",
]
