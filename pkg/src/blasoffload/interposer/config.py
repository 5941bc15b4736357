"""Runtime configuration parsed once from the environment.

Knobs, all optional:

* SCILIB_MODE: off | memcopy | counter | first_use (default first_use)
* SCILIB_THRESHOLD: offload size gate (default 500)
* SCILIB_TRACE: path to write a call trace to
* SCILIB_DEBUG: 0-3 diagnostic verbosity
* SCILIB_CAPACITY: device pool byte limit, plain or with K/M/G/T suffix

Unparseable values fall back to the default with a warning on stderr;
a bad environment must never stop the host application.
"""

from __future__ import annotations

import enum
import os
import sys
from dataclasses import dataclass
from typing import Mapping, Optional

from ..model import DEFAULT_THRESHOLD
from ..policy import PAGE_SIZES


class Mode(enum.Enum):
    OFF = "off"
    MEMCOPY = "memcopy"
    COUNTER = "counter"
    FIRST_USE = "first_use"


class Migration(enum.Enum):
    """How planned page moves are carried out."""

    OS_MOVE_PAGES = "os_move_pages"
    SIMULATED = "simulated"
    NONE = "none"


_SUFFIX = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30, "t": 1 << 40}


def _warn(name: str, raw: str, fallback) -> None:
    print(
        f"blasoffload: ignoring {name}={raw!r}, using {fallback}",
        file=sys.stderr,
    )


def _parse_capacity(raw: str) -> int:
    s = raw.strip().lower()
    mult = 1
    if s and s[-1] in _SUFFIX:
        mult = _SUFFIX[s[-1]]
        s = s[:-1]
    value = int(s) * mult
    if value <= 0:
        raise ValueError(raw)
    return value


def detect_page_size() -> int:
    try:
        size = os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError, AttributeError):
        size = 4096
    return size if size in PAGE_SIZES else 4096


@dataclass(frozen=True)
class RuntimeConfig:
    mode: Mode = Mode.FIRST_USE
    threshold: float = DEFAULT_THRESHOLD
    page_size: int = 4096
    debug_level: int = 0
    trace_path: Optional[str] = None
    capacity_limit: Optional[int] = None

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None) -> "RuntimeConfig":
        if env is None:
            env = os.environ

        mode = Mode.FIRST_USE
        raw = env.get("SCILIB_MODE")
        if raw is not None:
            try:
                mode = Mode(raw.strip().lower().replace("-", "_"))
            except ValueError:
                _warn("SCILIB_MODE", raw, mode.value)

        threshold = DEFAULT_THRESHOLD
        raw = env.get("SCILIB_THRESHOLD")
        if raw is not None:
            try:
                threshold = float(raw)
            except ValueError:
                _warn("SCILIB_THRESHOLD", raw, threshold)

        debug = 0
        raw = env.get("SCILIB_DEBUG")
        if raw is not None:
            try:
                debug = min(3, max(0, int(raw)))
            except ValueError:
                _warn("SCILIB_DEBUG", raw, debug)

        trace = env.get("SCILIB_TRACE") or None

        capacity = None
        raw = env.get("SCILIB_CAPACITY")
        if raw is not None:
            try:
                capacity = _parse_capacity(raw)
            except ValueError:
                _warn("SCILIB_CAPACITY", raw, "no limit")

        return cls(
            mode=mode,
            threshold=threshold,
            page_size=detect_page_size(),
            debug_level=debug,
            trace_path=trace,
            capacity_limit=capacity,
        )
