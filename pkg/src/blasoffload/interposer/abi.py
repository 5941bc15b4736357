"""Fortran level-3 BLAS ABI tables: symbol names, argument layouts, ctypes.

Everything is passed by reference in the Fortran convention; flag
arguments are single characters, integers are 32-bit (LP64 model).
Trailing hidden string-length arguments are omitted when calling through
ctypes: the reference implementations read flag strings through the
pointer only, and the System V calling convention tolerates missing
trailing arguments that are never read.
"""

from __future__ import annotations

import ctypes
from dataclasses import dataclass

from ..model import Family, Precision

# stored argument order per family; lds are derived from the arrays
ARG_ORDER = {
    Family.GEMM: ("transa", "transb", "m", "n", "k", "alpha", "A", "lda", "B", "ldb", "beta", "C", "ldc"),
    Family.SYMM: ("side", "uplo", "m", "n", "alpha", "A", "lda", "B", "ldb", "beta", "C", "ldc"),
    Family.HEMM: ("side", "uplo", "m", "n", "alpha", "A", "lda", "B", "ldb", "beta", "C", "ldc"),
    Family.SYRK: ("uplo", "transa", "n", "k", "alpha", "A", "lda", "beta", "C", "ldc"),
    Family.HERK: ("uplo", "transa", "n", "k", "alpha", "A", "lda", "beta", "C", "ldc"),
    Family.SYR2K: ("uplo", "transa", "n", "k", "alpha", "A", "lda", "B", "ldb", "beta", "C", "ldc"),
    Family.HER2K: ("uplo", "transa", "n", "k", "alpha", "A", "lda", "B", "ldb", "beta", "C", "ldc"),
    Family.TRMM: ("side", "uplo", "transa", "diag", "m", "n", "alpha", "A", "lda", "B", "ldb"),
    Family.TRSM: ("side", "uplo", "transa", "diag", "m", "n", "alpha", "A", "lda", "B", "ldb"),
}

_FLAG_TOKENS = frozenset({"transa", "transb", "side", "uplo", "diag"})
_INT_TOKENS = frozenset({"m", "n", "k", "lda", "ldb", "ldc"})
_ARRAY_TOKENS = ("A", "B", "C")

_REAL_CTYPE = {
    Precision.S: ctypes.c_float,
    Precision.D: ctypes.c_double,
    Precision.C: ctypes.c_float,
    Precision.Z: ctypes.c_double,
}

_NP_DTYPE = {
    Precision.S: "float32",
    Precision.D: "float64",
    Precision.C: "complex64",
    Precision.Z: "complex128",
}


@dataclass(frozen=True)
class RoutineSpec:
    """One intercepted routine: dgemm, ztrsm, and friends."""

    name: str
    family: Family
    precision: Precision

    @property
    def symbols(self) -> tuple[str, str]:
        """Both Fortran symbol spellings, preferred first."""
        return (self.name + "_", self.name)

    @property
    def arg_order(self) -> tuple[str, ...]:
        return ARG_ORDER[self.family]

    @property
    def npdtype(self) -> str:
        return _NP_DTYPE[self.precision]

    def scalar_is_complex(self, token: str) -> bool:
        """Whether alpha/beta is a complex value for this routine.

        Hermitian rank updates keep the diagonal real: herk takes real
        alpha and beta, her2k a real beta only.
        """
        if not self.precision.is_complex:
            return False
        if self.family is Family.HERK:
            return False
        if self.family is Family.HER2K and token == "beta":
            return False
        return True

    def scalar_ref(self, token: str, value: complex):
        """A ctypes reference holding a scalar argument's value."""
        base = _REAL_CTYPE[self.precision]
        value = complex(value)
        if self.scalar_is_complex(token):
            return (base * 2)(value.real, value.imag)
        return base(value.real)

    def read_scalar(self, token: str, address: int) -> complex:
        base = _REAL_CTYPE[self.precision]
        if self.scalar_is_complex(token):
            pair = ctypes.cast(address, ctypes.POINTER(base * 2)).contents
            return complex(pair[0], pair[1])
        return complex(ctypes.cast(address, ctypes.POINTER(base)).contents.value)

    def argtypes(self) -> list:
        types = []
        for token in self.arg_order:
            if token in _FLAG_TOKENS:
                types.append(ctypes.c_char_p)
            elif token in _INT_TOKENS:
                types.append(ctypes.POINTER(ctypes.c_int))
            elif token in ("alpha", "beta"):
                types.append(ctypes.POINTER(_REAL_CTYPE[self.precision]))
            else:
                types.append(ctypes.c_void_p)
        return types


def _build_table() -> dict[str, RoutineSpec]:
    table = {}
    for prec in Precision:
        for fam in (Family.GEMM, Family.SYMM, Family.SYRK, Family.SYR2K, Family.TRMM, Family.TRSM):
            name = prec.value + fam.value
            table[name] = RoutineSpec(name, fam, prec)
        if prec.is_complex:
            for fam in (Family.HEMM, Family.HERK, Family.HER2K):
                name = prec.value + fam.value
                table[name] = RoutineSpec(name, fam, prec)
    return table


ROUTINES: dict[str, RoutineSpec] = _build_table()

ALL_SYMBOLS: tuple[str, ...] = tuple(
    sym for spec in ROUTINES.values() for sym in spec.symbols
)
