"""Synthetic call-trace recipes with the reuse structure of real solvers.

Three shapes cover the interesting policy behavior:

* iterative-square: an outer iteration re-runs near-square complex
  multiplies and triangular solves on a fixed buffer set.  High reuse,
  square shapes, the case where first-use migration wins big.
* skinny-scalapack: one huge tall-skinny multiply per iteration on fixed
  buffers, padded with a band of small sub-threshold multiplies standing
  in for the CPU-side work between calls.  The case where per-call
  staging copies cost more than the kernels they feed.
* blocked-chain: chained multiplies where one product feeds the next
  (C = A*B then E = D*C), exercising operands that are written by one
  offloaded call and read by another.

Generation is deterministic: one seed fixes every dimension and every
synthetic address, so the same recipe writes byte-identical trace files.
Synthetic base addresses follow the system-allocator convention for large
blocks: sixteen bytes past a page boundary, so nothing is page aligned.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass

from .model import DEFAULT_THRESHOLD, Family, Precision, Side, Trans, Uplo, assemble_call, should_offload
from .traceio import TraceEvent

_SPACING_PAGE = 65536  # buffer spacing grain; multiple of both supported page sizes
_ALLOC_SKEW = 16  # allocator header offset: blocks land off page alignment


class Pattern(enum.Enum):
    ITERATIVE_SQUARE = "iterative-square"
    SKINNY_SCALAPACK = "skinny-scalapack"
    BLOCKED_CHAIN = "blocked-chain"


class RecipeError(ValueError):
    pass


# per-pattern calibrated defaults; iterations set the mean reuse targets
_DEFAULTS = {
    Pattern.ITERATIVE_SQUARE: dict(iterations=625, buffer_count=4, base_dim=1000, precision=Precision.Z),
    Pattern.SKINNY_SCALAPACK: dict(iterations=571, buffer_count=32, base_dim=500, precision=Precision.D),
    Pattern.BLOCKED_CHAIN: dict(iterations=50, buffer_count=2, base_dim=1200, precision=Precision.D),
}


@dataclass(frozen=True)
class WorkloadRecipe:
    """A named, fully-determined trace recipe.

    buffer_count means: groups of (A, B, C, T) buffers for
    iterative-square, sub-threshold worker triples for skinny-scalapack,
    independent chains for blocked-chain.
    """

    name: str
    pattern: Pattern
    iterations: int
    buffer_count: int
    base_dim: int
    precision: Precision
    seed: int = 7

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise RecipeError(f"iterations must be >= 1, got {self.iterations}")
        if self.buffer_count < 1:
            raise RecipeError(f"buffer_count must be >= 1, got {self.buffer_count}")
        if self.base_dim < 1:
            raise RecipeError(f"base_dim must be >= 1, got {self.base_dim}")


def recipe(pattern: Pattern, **overrides) -> WorkloadRecipe:
    """The calibrated default recipe for a pattern, with optional overrides."""
    params = dict(_DEFAULTS[pattern])
    params.update(overrides)
    params.setdefault("name", pattern.value)
    return WorkloadRecipe(pattern=pattern, **params)


class _Allocator:
    """Hands out non-overlapping synthetic buffer addresses."""

    def __init__(self, start: int = 0x200000000):
        self._cursor = start

    def take(self, nbytes: int) -> int:
        base = self._cursor + _ALLOC_SKEW
        end = base + nbytes
        self._cursor = ((end // _SPACING_PAGE) + 2) * _SPACING_PAGE
        return base


def _jitter(rng: random.Random, base: int, spread: float = 0.05) -> int:
    return max(1, round(base * rng.uniform(1.0 - spread, 1.0 + spread)))


def _emit(events: list[TraceEvent], call) -> None:
    decision = "offload" if should_offload(call, DEFAULT_THRESHOLD) else "cpu"
    events.append(TraceEvent(seq=len(events), call=call, decision=decision))


def _gen_iterative_square(r: WorkloadRecipe) -> list[TraceEvent]:
    rng = random.Random(r.seed)
    alloc = _Allocator()
    eb = r.precision.elem_bytes
    groups = []
    for _ in range(r.buffer_count):
        m = _jitter(rng, r.base_dim)
        n = _jitter(rng, r.base_dim)
        k = _jitter(rng, r.base_dim)
        groups.append(
            dict(
                m=m,
                n=n,
                k=k,
                a=alloc.take(m * k * eb),
                b=alloc.take(k * n * eb),
                c=alloc.take(m * n * eb),
                t=alloc.take(m * m * eb),
            )
        )
    events: list[TraceEvent] = []
    for _ in range(r.iterations):
        for g in groups:
            _emit(
                events,
                assemble_call(
                    Family.GEMM, r.precision, g["m"], g["n"], g["k"],
                    bases=(g["a"], g["b"], g["c"]),
                ),
            )
            _emit(
                events,
                assemble_call(
                    Family.TRSM, r.precision, g["m"], g["n"],
                    bases=(g["t"], g["c"]),
                    side=Side.LEFT, uplo=Uplo.LOWER,
                ),
            )
    return events


def _gen_skinny_scalapack(r: WorkloadRecipe) -> list[TraceEvent]:
    alloc = _Allocator()
    eb = r.precision.elem_bytes
    d = r.base_dim  # sub-threshold worker dimension; 500 sits exactly on the gate
    workers = [
        (alloc.take(d * d * eb), alloc.take(d * d * eb), alloc.take(d * d * eb))
        for _ in range(r.buffer_count)
    ]
    m, n, k = 32, 2400, 93536
    big_a = alloc.take(k * m * eb)  # stored transposed: k rows, m cols
    big_b = alloc.take(k * n * eb)
    big_c = alloc.take(m * n * eb)
    events: list[TraceEvent] = []
    for _ in range(r.iterations):
        for a, b, c in workers:
            _emit(
                events,
                assemble_call(Family.GEMM, r.precision, d, d, d, bases=(a, b, c)),
            )
        _emit(
            events,
            assemble_call(
                Family.GEMM, r.precision, m, n, k,
                bases=(big_a, big_b, big_c),
                trans_a=Trans.T, trans_b=Trans.N,
            ),
        )
    return events


def _gen_blocked_chain(r: WorkloadRecipe) -> list[TraceEvent]:
    rng = random.Random(r.seed)
    alloc = _Allocator()
    eb = r.precision.elem_bytes
    chains = []
    for _ in range(r.buffer_count):
        d = _jitter(rng, r.base_dim)
        chains.append(
            dict(
                d=d,
                a=alloc.take(d * d * eb),
                b=alloc.take(d * d * eb),
                c=alloc.take(d * d * eb),
                dd=alloc.take(d * d * eb),
                e=alloc.take(d * d * eb),
            )
        )
    events: list[TraceEvent] = []
    for _ in range(r.iterations):
        for ch in chains:
            d = ch["d"]
            _emit(
                events,
                assemble_call(Family.GEMM, r.precision, d, d, d, bases=(ch["a"], ch["b"], ch["c"])),
            )
            _emit(
                events,
                assemble_call(Family.GEMM, r.precision, d, d, d, bases=(ch["dd"], ch["c"], ch["e"])),
            )
    return events


_GENERATORS = {
    Pattern.ITERATIVE_SQUARE: _gen_iterative_square,
    Pattern.SKINNY_SCALAPACK: _gen_skinny_scalapack,
    Pattern.BLOCKED_CHAIN: _gen_blocked_chain,
}


def gen_trace(r: WorkloadRecipe) -> list[TraceEvent]:
    """Materialize a recipe into trace events, seq numbered from zero."""
    return _GENERATORS[r.pattern](r)
