"""Live interception of level-3 BLAS: in-process runtime and preload shim."""

from .abi import ALL_SYMBOLS, ROUTINES, RoutineSpec
from .config import Migration, Mode, RuntimeConfig, detect_page_size
from .runtime import BackendBinding, BlasRuntime, MockDeviceBackend, find_cpu_blas

__all__ = [
    "ALL_SYMBOLS",
    "BackendBinding",
    "BlasRuntime",
    "Migration",
    "Mode",
    "MockDeviceBackend",
    "ROUTINES",
    "RoutineSpec",
    "RuntimeConfig",
    "detect_page_size",
    "find_cpu_blas",
]
