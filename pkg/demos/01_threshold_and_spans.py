"""
Offload threshold and operand spans
===================================

Build a few level-3 BLAS calls by hand, look at the average-dimension
metric that gates offloading, and inspect the memory spans each operand
touches.
"""

import numpy as np

from blasoffload.model import (
    DEFAULT_THRESHOLD,
    Family,
    flops,
    Precision,
    Trans,
    assemble_call,
    navg,
    should_offload,
)

# a square multiply well above the gate, a small one well below, and the
# tall-skinny projection shape that makes per-call staging expensive
shapes = [
    ("square 2000", dict(m=2000, n=2000, k=2000)),
    ("small 100", dict(m=100, n=100, k=100)),
    ("skinny 32x2400x93536", dict(m=32, n=2400, k=93536, trans_a=Trans.T)),
]

print("gate: offload when navg > %.0f" % DEFAULT_THRESHOLD)
for label, dims in shapes:
    call = assemble_call(
        Family.GEMM,
        Precision.D,
        bases=(0x100000000, 0x200000000, 0x300000000),
        alpha=1.0,
        beta=0.0,
        **dims,
    )
    print(
        "%-22s navg=%9.1f offload=%s"
        % (label, navg(call), should_offload(call))
    )

# operand spans carry everything the policies need: base address, shape
# as stored, leading dimension, element size, and the access role
call = assemble_call(
    Family.GEMM,
    Precision.D,
    m=32,
    n=2400,
    k=93536,
    trans_a=Trans.T,
    bases=(0x100000000, 0x200000000, 0x300000000),
    alpha=1.0,
    beta=0.0,
)
print()
print("skinny gemm operands:")
total = 0
for name, op in zip("ABC", call.operands):
    total += op.accessed_bytes
    print(
        "  %s at 0x%x  %6d x %-5d ld=%-6d %5.1f MB  role=%s"
        % (name, op.base, op.rows, op.cols, op.ld, op.accessed_bytes / 1e6, op.role.value)
    )
print("  footprint %.2f MB, flops %.2f Gflop" % (total / 1e6, flops(call) / 1e9))

# the scale of the imbalance: bytes per flop decides whether staging pays
ratio = total / flops(call)
print("  bytes/flop = %.4f (square 2000: %.4f)" % (ratio, 3 * 2000 * 2000 * 8 / (2 * 2000.0**3)))

# numpy cross-check of the flop count formula for gemm
m, n, k = 32, 2400, 93536
assert flops(call) == 2.0 * m * n * k
print("flop formula checked against 2*m*n*k =", np.format_float_scientific(2.0 * m * n * k, 3))
