"""Compile the preload shim shared object.

Usage:
    python -m blasoffload.interposer.build [--out PATH] [--cc CC] [--force]

The shim source ships inside the package; the compiled object is cached
next to the source by default so repeated builds are no-ops.  Returns the
path on stdout so shell scripts can capture it:

    SHIM=$(python -m blasoffload.interposer.build)
    LD_PRELOAD="$SHIM libopenblas.so.0" ./app
"""

from __future__ import annotations

import argparse
import os
import shutil
import subprocess
import sys
from pathlib import Path

SOURCE = Path(__file__).resolve().parent / "shim.c"
DEFAULT_OUT = SOURCE.with_name("blasoffload_shim.so")

CFLAGS = ["-shared", "-fPIC", "-O2", "-std=c11", "-Wall", "-Wextra"]
LIBS = ["-ldl", "-lpthread", "-lm"]


def find_compiler(cc: str | None = None) -> str:
    candidates = [cc] if cc else [os.environ.get("CC"), "cc", "gcc", "clang"]
    for cand in candidates:
        if cand and shutil.which(cand):
            return cand
    raise RuntimeError("no C compiler found; set CC or pass --cc")


def build_shim(
    out: str | os.PathLike | None = None,
    cc: str | None = None,
    force: bool = False,
) -> Path:
    """Compile shim.c into a shared object, reusing a fresh cached build.

    Returns the path to the .so.  Raises RuntimeError when no compiler is
    available and CalledProcessError when compilation fails.
    """
    target = Path(out) if out is not None else DEFAULT_OUT
    if not SOURCE.exists():
        raise RuntimeError(f"shim source missing: {SOURCE}")
    if (
        not force
        and target.exists()
        and target.stat().st_mtime >= SOURCE.stat().st_mtime
    ):
        return target
    compiler = find_compiler(cc)
    target.parent.mkdir(parents=True, exist_ok=True)
    cmd = [compiler, *CFLAGS, "-o", str(target), str(SOURCE), *LIBS]
    subprocess.run(cmd, check=True, capture_output=True, text=True)
    return target


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="python -m blasoffload.interposer.build",
        description="compile the LD_PRELOAD interposer shim",
    )
    parser.add_argument("--out", help="output .so path (default: next to shim.c)")
    parser.add_argument("--cc", help="compiler to use (default: $CC, cc, gcc, clang)")
    parser.add_argument(
        "--force", action="store_true", help="rebuild even when the cache is fresh"
    )
    args = parser.parse_args(argv)
    try:
        path = build_shim(out=args.out, cc=args.cc, force=args.force)
    except RuntimeError as exc:
        print(f"blasoffload: error: {exc}", file=sys.stderr)
        return 2
    except subprocess.CalledProcessError as exc:
        sys.stderr.write(exc.stderr or "")
        print("blasoffload: error: shim compilation failed", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
