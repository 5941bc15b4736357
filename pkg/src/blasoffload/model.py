"""Level-3 BLAS call descriptions and the offload gating metric.

A call is modeled as its routine family, precision, problem dimensions and
the memory spans of its matrix operands.  The offload decision for a call
uses the cube root of the dominant dimension product (for GEMM simply
(m*n*k)**(1/3)), so a single scalar threshold covers square and skinny
shapes alike: a 4000x4000x32 multiply and a 504x504x504 multiply sit at
the same point of the scale even though their footprints differ by 60x.

Column-major storage throughout.  Transposition flags change which stored
shape an input operand has; they never change the result operand.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

DEFAULT_THRESHOLD = 500.0

_CUBE_ROOT = 1.0 / 3.0


class Family(enum.Enum):
    """Routine family, independent of precision."""

    GEMM = "gemm"
    SYMM = "symm"
    HEMM = "hemm"
    SYRK = "syrk"
    HERK = "herk"
    SYR2K = "syr2k"
    HER2K = "her2k"
    TRMM = "trmm"
    TRSM = "trsm"


class Precision(enum.Enum):
    S = "s"
    D = "d"
    C = "c"
    Z = "z"

    @property
    def elem_bytes(self) -> int:
        return {"s": 4, "d": 8, "c": 8, "z": 16}[self.value]

    @property
    def is_complex(self) -> bool:
        return self.value in ("c", "z")


class Trans(enum.Enum):
    N = "N"
    T = "T"
    C = "C"


class Side(enum.Enum):
    LEFT = "L"
    RIGHT = "R"


class Uplo(enum.Enum):
    UPPER = "U"
    LOWER = "L"


class Role(enum.Enum):
    INPUT = "in"
    OUTPUT = "out"
    INOUT = "inout"


# Families taking a k dimension; the rest derive their work from m and n.
K_FAMILIES = frozenset(
    {Family.GEMM, Family.SYRK, Family.HERK, Family.SYR2K, Family.HER2K}
)
SIDE_FAMILIES = frozenset({Family.SYMM, Family.HEMM, Family.TRMM, Family.TRSM})
COMPLEX_ONLY_FAMILIES = frozenset({Family.HEMM, Family.HERK, Family.HER2K})


@dataclass(frozen=True)
class OperandSpan:
    """One matrix operand as the interposer sees it: an address range.

    `rows` and `cols` are the stored shape (after any transposition), `ld`
    the leading dimension in elements.  The span covers
    ((cols-1)*ld + rows) * elem_bytes bytes starting at `base`; with
    ld > rows the tail of each column is owned by the allocation but never
    touched by the kernel, and is excluded.
    """

    base: int
    rows: int
    cols: int
    ld: int
    elem_bytes: int
    role: Role

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"span shape {self.rows}x{self.cols} must be >= 1x1")
        if self.ld < self.rows:
            raise ValueError(f"ld {self.ld} < rows {self.rows}")
        if self.base < 0:
            raise ValueError("negative base address")
        if self.elem_bytes not in (4, 8, 16):
            raise ValueError(f"unsupported element size {self.elem_bytes}")

    @property
    def accessed_bytes(self) -> int:
        return ((self.cols - 1) * self.ld + self.rows) * self.elem_bytes

    @property
    def end(self) -> int:
        """One past the last accessed byte."""
        return self.base + self.accessed_bytes


def operand_bytes(span: OperandSpan) -> int:
    """Bytes the kernel can touch inside the span (excludes ld padding tail)."""
    return span.accessed_bytes


@dataclass(frozen=True)
class BlasCall:
    """A single intercepted or synthesized level-3 call.

    k is None for families that do not use it (SYMM/HEMM/TRMM/TRSM).
    trans_b is only meaningful for GEMM; the rank-2k updates share one
    transposition flag (trans_a).  alpha and beta are stored as complex,
    with zero imaginary part for real precisions.
    """

    family: Family
    precision: Precision
    m: int
    n: int
    k: Optional[int]
    trans_a: Trans = Trans.N
    trans_b: Optional[Trans] = None
    side: Optional[Side] = None
    uplo: Optional[Uplo] = None
    alpha: complex = 1.0 + 0.0j
    beta: complex = 0.0 + 0.0j
    operands: tuple[OperandSpan, ...] = field(default_factory=tuple)
    thread: int = 0

    def validate(self) -> None:
        """Raise ValueError on any structural inconsistency."""
        check_structure(
            self.family,
            self.precision,
            self.m,
            self.n,
            self.k,
            trans_b=self.trans_b,
            side=self.side,
        )
        expected = expected_operand_shapes(self)
        if len(self.operands) != len(expected):
            raise ValueError(
                f"{self.family.value} takes {len(expected)} operands, "
                f"got {len(self.operands)}"
            )
        for i, (span, (rows, cols, role)) in enumerate(zip(self.operands, expected)):
            if (span.rows, span.cols) != (rows, cols):
                raise ValueError(
                    f"operand {i}: stored shape {span.rows}x{span.cols} does not "
                    f"match {rows}x{cols} implied by dims and flags"
                )
            if span.role is not role:
                raise ValueError(f"operand {i}: role {span.role} should be {role}")
            if span.elem_bytes != self.precision.elem_bytes:
                raise ValueError(
                    f"operand {i}: element size {span.elem_bytes} does not match "
                    f"precision {self.precision.value}"
                )


def check_structure(
    family: Family,
    precision: Precision,
    m: int,
    n: int,
    k: Optional[int],
    *,
    trans_b: Optional[Trans],
    side: Optional[Side],
) -> None:
    """Reject dimension/flag combinations the routine signature cannot express."""
    if m < 1 or n < 1:
        raise ValueError(f"{family.value}: m={m} n={n} must be >= 1")
    if family in K_FAMILIES:
        if k is None or k < 1:
            raise ValueError(f"{family.value}: k={k} must be >= 1")
    elif k is not None:
        raise ValueError(f"{family.value} takes no k (got {k})")
    if family in SIDE_FAMILIES:
        if side is None:
            raise ValueError(f"{family.value} needs a side flag")
    elif side is not None:
        raise ValueError(f"{family.value} takes no side flag")
    if family is Family.GEMM:
        if trans_b is None:
            raise ValueError("gemm needs trans_b")
    elif trans_b is not None:
        raise ValueError(f"{family.value} takes no trans_b flag")
    if family in COMPLEX_ONLY_FAMILIES and not precision.is_complex:
        raise ValueError(f"{family.value} is complex-only")


def _stored(trans: Trans, untransposed: tuple[int, int]) -> tuple[int, int]:
    r, c = untransposed
    return (r, c) if trans is Trans.N else (c, r)


def expected_operand_shapes(call: BlasCall) -> list[tuple[int, int, Role]]:
    """Stored (rows, cols, role) for each operand, in routine argument order."""
    m, n, k = call.m, call.n, call.k
    f = call.family
    out_role = Role.OUTPUT if call.beta == 0 else Role.INOUT
    if f is Family.GEMM:
        ar, ac = _stored(call.trans_a, (m, k))
        br, bc = _stored(call.trans_b or Trans.N, (k, n))
        return [(ar, ac, Role.INPUT), (br, bc, Role.INPUT), (m, n, out_role)]
    if f in (Family.SYMM, Family.HEMM):
        a_dim = m if call.side is Side.LEFT else n
        return [(a_dim, a_dim, Role.INPUT), (m, n, Role.INPUT), (m, n, out_role)]
    if f in (Family.SYRK, Family.HERK):
        ar, ac = _stored(call.trans_a, (n, k))
        return [(ar, ac, Role.INPUT), (n, n, out_role)]
    if f in (Family.SYR2K, Family.HER2K):
        ar, ac = _stored(call.trans_a, (n, k))
        return [(ar, ac, Role.INPUT), (ar, ac, Role.INPUT), (n, n, out_role)]
    if f in (Family.TRMM, Family.TRSM):
        a_dim = m if call.side is Side.LEFT else n
        return [(a_dim, a_dim, Role.INPUT), (m, n, Role.INOUT)]
    raise ValueError(f"unknown family {f}")


def dominant_dims(
    family: Family, side: Optional[Side], m: int, n: int, k: Optional[int]
) -> tuple[int, int, int]:
    """The three dimensions whose product drives the flop count.

    GEMM: (m, n, k).  Side-flagged families: (m, m, n) on the left,
    (m, n, n) on the right.  Rank-k and rank-2k updates: (n, n, k).
    """
    if family is Family.GEMM:
        assert k is not None
        return (m, n, k)
    if family in (Family.SYRK, Family.HERK, Family.SYR2K, Family.HER2K):
        assert k is not None
        return (n, n, k)
    if family in SIDE_FAMILIES:
        return (m, m, n) if side is Side.LEFT else (m, n, n)
    raise ValueError(f"unknown family {family}")


def navg_dims(
    family: Family, side: Optional[Side], m: int, n: int, k: Optional[int]
) -> float:
    d1, d2, d3 = dominant_dims(family, side, m, n, k)
    return float(d1 * d2 * d3) ** _CUBE_ROOT


def navg(call: BlasCall) -> float:
    """Average-dimension offload metric, cube root of the dominant product."""
    return navg_dims(call.family, call.side, call.m, call.n, call.k)


def flops(call: BlasCall) -> int:
    """Real floating-point operations performed by the kernel.

    Complex precisions count 4x their real-arithmetic shape (a complex
    multiply-add is four real multiplies plus four real adds).
    """
    m, n, k = call.m, call.n, call.k
    f = call.family
    if f is Family.GEMM:
        base = 2 * m * n * k
    elif f in (Family.SYMM, Family.HEMM):
        base = 2 * m * m * n if call.side is Side.LEFT else 2 * m * n * n
    elif f in (Family.SYRK, Family.HERK):
        base = n * n * k
    elif f in (Family.SYR2K, Family.HER2K):
        base = 2 * n * n * k
    elif f in (Family.TRMM, Family.TRSM):
        base = m * m * n if call.side is Side.LEFT else m * n * n
    else:
        raise ValueError(f"unknown family {f}")
    return 4 * base if call.precision.is_complex else base


def should_offload(call: BlasCall, threshold: float = DEFAULT_THRESHOLD) -> bool:
    """Strictly-greater gate: navg == threshold stays on the CPU."""
    return navg(call) > threshold


def assemble_call(
    family: Family,
    precision: Precision,
    m: int,
    n: int,
    k: Optional[int] = None,
    *,
    bases: tuple[int, ...],
    lds: Optional[tuple[int, ...]] = None,
    trans_a: Trans = Trans.N,
    trans_b: Optional[Trans] = None,
    side: Optional[Side] = None,
    uplo: Optional[Uplo] = None,
    alpha: complex = 1.0,
    beta: complex = 0.0,
    thread: int = 0,
) -> BlasCall:
    """Build a validated BlasCall, deriving operand spans from dims and flags.

    Parameters
    ----------
    bases : tuple of int
        One base address per operand in routine argument order.
    lds : tuple of int, optional
        Leading dimensions; defaults to the packed stored row counts.

    Returns
    -------
    BlasCall
        Validated call with spans whose shapes are consistent with the flags.
    """
    if family is Family.GEMM and trans_b is None:
        trans_b = Trans.N
    check_structure(family, precision, m, n, k, trans_b=trans_b, side=side)
    probe = BlasCall(
        family=family,
        precision=precision,
        m=m,
        n=n,
        k=k,
        trans_a=trans_a,
        trans_b=trans_b,
        side=side,
        uplo=uplo,
        alpha=complex(alpha),
        beta=complex(beta),
    )
    shapes = expected_operand_shapes(probe)
    if len(bases) != len(shapes):
        raise ValueError(f"{family.value} takes {len(shapes)} operands")
    if lds is None:
        lds = tuple(rows for rows, _, _ in shapes)
    spans = tuple(
        OperandSpan(
            base=bases[i],
            rows=shapes[i][0],
            cols=shapes[i][1],
            ld=lds[i],
            elem_bytes=precision.elem_bytes,
            role=shapes[i][2],
        )
        for i in range(len(shapes))
    )
    call = BlasCall(
        family=family,
        precision=precision,
        m=m,
        n=n,
        k=k,
        trans_a=trans_a,
        trans_b=trans_b,
        side=side,
        uplo=uplo,
        alpha=complex(alpha),
        beta=complex(beta),
        operands=spans,
        thread=thread,
    )
    call.validate()
    return call
