"""Command-line entry point: ``platoonstab {simulate,analyze,probe,sweep}``.

Exit codes: 0 success, 1 runtime or numerical failure, 2 invalid input.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    NonCausalMode,
    NumericalBlowup,
    ParseError,
    PlatoonStabError,
    ValidationError,
)
from .model import ProbeSpec, path_probe
from .scenario_io import (
    load_scenario,
    probe_payload,
    report_payload,
    write_json,
    write_probe_table,
    write_trace,
)
from .simulation import extract_errors, simulate
from .stability import analyze, sweep_propagation

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2
INPUT_ERRORS = (ParseError, ValidationError, NonCausalMode)


def _meta(command):
    return {"tool": "platoonstab", "version": __version__, "command": command}


def _sibling(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix)


def _config(args):
    config = load_scenario(args.scenario)
    if args.shift_sign:
        config = config.replace(shift_sign=args.shift_sign.replace("-", "_"))
    return config


def cmd_simulate(args):
    config = _config(args)
    try:
        trace = simulate(config)
    except NumericalBlowup as exc:
        partial = Path(str(args.out) + ".partial")
        if exc.trace is not None:
            write_trace(exc.trace, partial)
        print(f"error: {exc}; partial trace written to {partial}", file=sys.stderr)
        return EXIT_RUNTIME
    write_trace(trace, args.out)
    errs = extract_errors(trace)
    print(
        f"N={config.N} t_end={config.t_end:g} "
        f"max|e|={np.max(np.abs(errs.e)):.9g} max|sum e|={np.max(np.abs(errs.total)):.9g}"
    )
    if args.plot:
        from .plotting import plot_trace

        plot_trace(trace, _sibling(args.out, "_errors.png"))
    return EXIT_OK


def _parse_sizes(text):
    try:
        sizes = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ValidationError("sizes", f"expected comma-separated integers, got {text!r}") from None
    if len(sizes) < 2 or any(n < 2 for n in sizes):
        raise ValidationError("sizes", "need at least two platoon sizes, each >= 2")
    return sizes


def cmd_analyze(args):
    config = _config(args)
    sizes = _parse_sizes(args.sizes) if args.sizes else None
    report = analyze(config, platoon_sizes=sizes)
    payload = {"meta": _meta("analyze"), "report": report_payload(report)}
    write_json(payload, args.out)
    sup = report.sweep_supremum
    print(
        f"frequency criterion: {report.string_stable_frequency_criterion} "
        f"(supremum {sup:.6g})" if sup is not None else "frequency criterion: unavailable"
    )
    if report.strong_growth is not None:
        print(f"strong_stability_violated: {report.strong_growth.strong_stability_violated}")
    for diag in report.diagnostics:
        print(f"diagnostic: {diag['check']}: {diag['error']}: {diag['message']}", file=sys.stderr)
    if args.plot:
        from .plotting import plot_growth, plot_sweep

        if report.frequency_sweep is not None:
            plot_sweep(report.frequency_sweep, _sibling(args.out, "_sweep.png"))
        if report.strong_growth is not None:
            plot_growth(report.strong_growth, _sibling(args.out, "_growth.png"))
    return EXIT_OK if report.ok else EXIT_RUNTIME


def cmd_probe(args):
    config = _config(args)
    if config.probe is None:
        raise ParseError("scenario has no 'probe' block")
    spec = config.probe
    spec = ProbeSpec(
        path=(args.path or spec.path).replace("-", "_"),
        n_max=args.n_max if args.n_max is not None else spec.n_max,
        bound=args.bound if args.bound is not None else spec.bound,
        x=spec.x,
    )
    result = path_probe(config, spec.path, spec.n_max, spec.bound, x_fixed=spec.x)
    write_json({"meta": _meta("probe"), "probe": probe_payload(result)}, args.out)
    table = _sibling(args.out, ".csv")
    if table == Path(args.out):
        table = Path(str(args.out) + ".csv")
    write_probe_table(result, table)
    threshold = result.divergence_threshold_n
    print(f"verdict: {result.verdict}" + (f" (first n over bound: {threshold})" if threshold else ""))
    if args.plot:
        from .plotting import plot_probe

        plot_probe(result, _sibling(args.out, "_probe.png"))
    return EXIT_OK


def cmd_sweep(args):
    config = _config(args)
    sweep = sweep_propagation(config, args.wmin, args.wmax, args.points)
    np.savetxt(
        args.out,
        np.column_stack([sweep.w, sweep.magnitude]),
        fmt="%.9g", delimiter=",", header="w,magnitude", comments="",
    )
    print(
        f"supremum {sweep.supremum:.9g} at w={sweep.w_at_supremum:.9g}; "
        f"string_stable_frequency_criterion: {sweep.string_stable}"
    )
    if args.plot:
        from .plotting import plot_sweep

        plot_sweep(sweep, _sibling(args.out, ".png"))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="platoonstab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--scenario", required=True, help="scenario YAML file")
        p.add_argument("--out", required=True, help="output file")
        p.add_argument("--shift-sign", choices=["causal", "paper_exact", "paper-exact"],
                       help="override the scenario's shift convention")
        p.add_argument("--plot", action="store_true", help="also write PNG figures next to --out")

    p = sub.add_parser("simulate", help="time-domain simulation; writes a CSV trace")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="stability report as JSON")
    common(p)
    p.add_argument("--sizes", help="platoon sizes for the growth check, e.g. 5,10,20,40")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("probe", help="necessary-condition path probe")
    common(p)
    p.add_argument("--path", choices=["inv-sqrt-n", "inv_sqrt_n", "fixed-x", "fixed_x"])
    p.add_argument("--n-max", type=int)
    p.add_argument("--bound", type=float)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("sweep", help="|Gamma(jw)| frequency sweep as CSV")
    common(p)
    p.add_argument("--wmin", type=float, default=1e-3)
    p.add_argument("--wmax", type=float, default=1e3)
    p.add_argument("--points", type=int, default=2000)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PlatoonStabError, ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
