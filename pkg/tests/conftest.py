import random

import pytest

from blasoffload.model import Family, Precision, Trans, assemble_call
from blasoffload.traceio import TraceEvent

PAGE = 65536


class Arena:
    """Hands out malloc-like (page-unaligned) base addresses that never
    overlap, far enough apart that distinct buffers never share a page."""

    def __init__(self, start: int = 0x7F0000000000):
        self.cursor = start

    def take(self, nbytes: int) -> int:
        base = self.cursor + 24
        end = base + nbytes
        self.cursor = ((end // PAGE) + 2) * PAGE
        return base


@pytest.fixture
def arena():
    return Arena()


def gemm(
    m,
    n,
    k,
    *,
    arena=None,
    precision=Precision.D,
    alpha=1.0,
    beta=0.0,
    trans_a=Trans.N,
    trans_b=Trans.N,
    bases=None,
    lds=None,
    thread=0,
):
    eb = {Precision.S: 4, Precision.D: 8, Precision.C: 8, Precision.Z: 16}[precision]
    if bases is None:
        a = arena or Arena()
        ra, ca = (m, k) if trans_a is Trans.N else (k, m)
        rb, cb = (k, n) if trans_b is Trans.N else (n, k)
        bases = (a.take(ra * ca * eb), a.take(rb * cb * eb), a.take(m * n * eb))
    return assemble_call(
        Family.GEMM,
        precision,
        m,
        n,
        k,
        bases=bases,
        lds=lds,
        trans_a=trans_a,
        trans_b=trans_b,
        alpha=alpha,
        beta=beta,
        thread=thread,
    )


def event(seq, call, decision=None, bytes_moved=0, wall_ns=0):
    return TraceEvent(
        seq=seq, call=call, decision=decision, bytes_moved=bytes_moved, wall_ns=wall_ns
    )


def random_square_trace(seed, n_events=20, dim_range=(64, 1400), buffers=6):
    """Trace of square dgemms over a small pool of reused buffers; sizes
    straddle the default threshold so both decisions appear."""
    rng = random.Random(seed)
    arena = Arena()
    pool = {}
    events = []
    for seq in range(n_events):
        d = rng.randint(*dim_range)
        key = (rng.randrange(buffers), d)
        if key not in pool:
            pool[key] = tuple(arena.take(d * d * 8) for _ in range(3))
        events.append(event(seq, gemm(d, d, d, bases=pool[key])))
    return events
