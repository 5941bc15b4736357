"""Command line front end: gen, simulate, compare, report.

Exit codes: 0 on success, 1 for usage errors, 2 for data errors
(unreadable or malformed trace, model, or report files).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .model import DEFAULT_THRESHOLD
from .perf import DEFAULT_PAGE_SIZE, CostModel, Policy, PolicyReport, SimulationError, compare, fastest, simulate
from .policy import PAGE_SIZES
from .traceio import TraceFormatError, read_trace, write_trace
from .workloads import Pattern, Precision, RecipeError, gen_trace, recipe

_USAGE_EXIT = 1
_DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; remap to 1 so 2 stays for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(_USAGE_EXIT, f"{self.prog}: error: {message}\n")


class _DataError(Exception):
    pass


def _build_parser() -> _Parser:
    p = _Parser(prog="blasoffload", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"blasoffload {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    g = sub.add_parser("gen", help="generate a synthetic trace file", parents=[], prog="blasoffload gen")
    g.add_argument("--pattern", required=True, choices=[pat.value for pat in Pattern])
    g.add_argument("--out", required=True, help="trace file to write")
    g.add_argument("--iterations", type=int, default=None)
    g.add_argument("--buffers", type=int, default=None, help="buffer groups / worker triples / chains")
    g.add_argument("--base-dim", type=int, default=None)
    g.add_argument("--precision", choices=[pr.value for pr in Precision], default=None)
    g.add_argument("--seed", type=int, default=None)

    def _sim_flags(sp):
        sp.add_argument("--model", default=None, help="calibration JSON (default: packaged)")
        sp.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
        sp.add_argument("--page-size", type=int, choices=list(PAGE_SIZES), default=DEFAULT_PAGE_SIZE)
        sp.add_argument("--capacity", type=int, default=None, help="device pool bytes")
        sp.add_argument(
            "--json",
            dest="as_json",
            action="store_true",
            help="print the machine-readable report instead of the table",
        )

    s = sub.add_parser("simulate", help="replay a trace under one policy", prog="blasoffload simulate")
    s.add_argument("trace")
    s.add_argument(
        "--policy",
        required=True,
        type=lambda s: s.strip().lower().replace("-", "_"),
        choices=[pol.value for pol in Policy],
    )
    _sim_flags(s)

    c = sub.add_parser("compare", help="replay a trace under every policy", prog="blasoffload compare")
    c.add_argument("trace")
    _sim_flags(c)

    r = sub.add_parser("report", help="render a machine-readable report as a table", prog="blasoffload report")
    r.add_argument("report", help="JSON report from simulate/compare --json")
    return p


def _load_trace(path: str):
    try:
        return read_trace(path)
    except OSError as exc:
        raise _DataError(f"cannot read trace {path!r}: {exc.strerror or exc}") from exc
    except TraceFormatError as exc:
        raise _DataError(f"malformed trace {path!r}: {exc}") from exc


def _load_model(path):
    if path is None:
        return CostModel.load()
    try:
        return CostModel.load(path)
    except OSError as exc:
        raise _DataError(f"cannot read model {path!r}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, ValueError, TypeError) as exc:
        raise _DataError(f"bad model {path!r}: {exc}") from exc


_COLUMNS = ("policy", "offloaded", "cpu", "blas_s", "movement_s", "total_s", "bytes_moved", "mean_reuse")
_WIDTHS = (10, 9, 7, 12, 12, 12, 14, 10)


def _report_row(rep: PolicyReport) -> tuple:
    movement = f"{rep.data_movement_time:.6f}"
    if rep.movement_included_in_blas:
        movement = "in blas"
    return (
        rep.policy.value,
        str(rep.calls_offloaded),
        str(rep.calls_kept_on_cpu),
        f"{rep.blas_time:.6f}",
        movement,
        f"{rep.total_time:.6f}",
        str(rep.bytes_moved),
        f"{rep.mean_reuse:.2f}",
    )


def _print_table(reports: list[PolicyReport], mark_fastest: bool) -> None:
    best = fastest(reports).policy if mark_fastest and reports else None
    header = "  ".join(name.ljust(w) for name, w in zip(_COLUMNS, _WIDTHS))
    print(header.rstrip())
    for rep in reports:
        row = "  ".join(cell.ljust(w) for cell, w in zip(_report_row(rep), _WIDTHS)).rstrip()
        if rep.policy is best:
            row += "  <- fastest"
        print(row)


def _print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=False))


def _cmd_gen(args) -> int:
    overrides = {}
    if args.iterations is not None:
        overrides["iterations"] = args.iterations
    if args.buffers is not None:
        overrides["buffer_count"] = args.buffers
    if args.base_dim is not None:
        overrides["base_dim"] = args.base_dim
    if args.precision is not None:
        overrides["precision"] = Precision(args.precision)
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        events = gen_trace(recipe(Pattern(args.pattern), **overrides))
    except RecipeError as exc:
        raise _DataError(str(exc)) from exc
    try:
        write_trace(events, args.out)
    except OSError as exc:
        raise _DataError(f"cannot write {args.out!r}: {exc.strerror or exc}") from exc
    print(f"wrote {len(events)} events to {args.out}")
    return 0


def _sim_common(args):
    events = _load_trace(args.trace)
    model = _load_model(args.model)
    kwargs = dict(threshold=args.threshold, page_size=args.page_size, capacity_bytes=args.capacity)
    return events, model, kwargs


def _cmd_simulate(args) -> int:
    events, model, kwargs = _sim_common(args)
    try:
        rep = simulate(events, Policy(args.policy), model, **kwargs)
    except SimulationError as exc:
        raise _DataError(str(exc)) from exc
    if args.as_json:
        _print_json(rep.to_dict())
    else:
        _print_table([rep], mark_fastest=False)
    return 0


def _cmd_compare(args) -> int:
    events, model, kwargs = _sim_common(args)
    try:
        reports = compare(events, model, **kwargs)
    except SimulationError as exc:
        raise _DataError(str(exc)) from exc
    if args.as_json:
        _print_json([rep.to_dict() for rep in reports])
    else:
        _print_table(reports, mark_fastest=True)
    return 0


def _cmd_report(args) -> int:
    try:
        with open(args.report, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise _DataError(f"cannot read report {args.report!r}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise _DataError(f"bad report {args.report!r}: {exc}") from exc
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list) or not payload:
        raise _DataError(f"bad report {args.report!r}: expected a report object or list")
    try:
        reports = [PolicyReport.from_dict(item) for item in payload]
    except (KeyError, ValueError, TypeError) as exc:
        raise _DataError(f"bad report {args.report!r}: {exc}") from exc
    _print_table(reports, mark_fastest=len(reports) > 1)
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "simulate": _cmd_simulate,
    "compare": _cmd_compare,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _DataError as exc:
        print(f"blasoffload: error: {exc}", file=sys.stderr)
        return _DATA_EXIT


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
