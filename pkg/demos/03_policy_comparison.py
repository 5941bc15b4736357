"""
Trace-driven policy comparison
==============================

Generate the two shipped workload shapes and compare all four placement
policies on each through the calibrated cost model. One shape loves
offloading, the other punishes per-call staging.
"""

from blasoffload.perf import CostModel, compare
from blasoffload.workloads import Pattern, gen_trace, recipe

model = CostModel.load()


def show(pattern, **overrides):
    r = recipe(pattern, **overrides)
    events = gen_trace(r)
    print()
    print("%s: %d events" % (pattern.value, len(events)))
    print("  %-10s %10s %10s %10s %8s" % ("policy", "blas s", "move s", "total s", "reuse"))
    reports = compare(events, model)
    best = min(reports, key=lambda rep: rep.total_time)
    for rep in reports:
        move = "in blas" if rep.movement_included_in_blas else "%10.4f" % rep.data_movement_time
        mark = "  <- fastest" if rep is best else ""
        print(
            "  %-10s %10.4f %10s %10.4f %8.1f%s"
            % (rep.policy.value, rep.blas_time, move, rep.total_time, rep.mean_reuse, mark)
        )
    return reports


# near-square complex matrices, heavy buffer reuse: movement amortizes
# away and the device kernel advantage dominates
show(Pattern.ITERATIVE_SQUARE)

# tall-skinny projections: staging the wide operand every call costs more
# than the kernel saves, so only migrate-once placement still wins
show(Pattern.SKINNY_SCALAPACK)

# scale knobs live on the recipe: a quarter-size run keeps the ordering
show(Pattern.ITERATIVE_SQUARE, iterations=156)
