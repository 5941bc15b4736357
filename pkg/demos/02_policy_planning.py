"""
Movement planning under the placement policies
==============================================

Run the same call sequence through the stateless staging planner and the
migrate-on-first-touch planner, and watch the movement bill diverge as
buffers get reused.
"""

from blasoffload.model import Family, Precision, assemble_call
from blasoffload.policy import ResidencyMap, plan_first_use, plan_memcopy

PAGE = 65536


def square_gemm(bases, d=1200):
    return assemble_call(
        Family.GEMM,
        Precision.D,
        d,
        d,
        d,
        bases=bases,
        alpha=1.0,
        beta=1.0,
    )


# three buffers reused across ten iterations, like a solver inner loop
A, B, C = 0x7F0000000000, 0x7F0001000000, 0x7F0002000000
calls = [square_gemm((A, B, C)) for _ in range(10)]

# memcopy: every call stages operands in and results out, no memory
staged = 0
for call in calls:
    plan = plan_memcopy(call)
    staged += plan.total_bytes
print("memcopy : %8.1f MB staged over %d calls" % (staged / 1e6, len(calls)))

# first_use: pages migrate on the first device touch and then stay put
rmap = ResidencyMap(page_size=PAGE)
migrated = []
for tick, call in enumerate(calls):
    plan, rmap = plan_first_use(call, rmap, tick=tick)
    migrated.append(plan.migrated_bytes)
print(
    "first_use: %8.1f MB migrated, per call: %s"
    % (sum(migrated) / 1e6, [round(b / 1e6, 1) for b in migrated])
)

# the residency map remembers which pages live on the device
print(
    "device holds %d pages (%.1f MB); clock at tick %d"
    % (rmap.device_pages, rmap.device_bytes / 1e6, rmap.clock)
)

# reuse counters: every touch after the first bumps the page's counter
first, _ = rmap.page_range(calls[0].operands[0])
domain, tick, reuse = rmap.page_state(first)
print("first page of A: domain=%s migrated_at_tick=%s reuse=%d" % (domain.value, tick, reuse))

# a fresh buffer shows up as movement again, old ones stay free
D = 0x7F0003000000
extra = square_gemm((A, B, D))
plan, rmap = plan_first_use(extra, rmap, tick=len(calls))
print("swap C for a new output: %.1f MB moved (only the new buffer)" % (plan.migrated_bytes / 1e6))
