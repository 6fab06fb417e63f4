"""Command-line entry point: compare, sweep, validate, region, threshold.

Exit codes: 0 success, 1 validation failure, 2 bad arguments, 3 numerical
failure (truncation overflow, no boundary, inconclusive validation).
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys

from . import __version__, analytic, engine
from .errors import (
    ConfigError,
    InvalidParameterError,
    NoBoundaryError,
    QiCloakError,
    TruncationOverflowError,
)
from .fock_oracle import default_dim_cap
from .params import PARAM_NAMES, ProtocolParams, default_gain
from .report_io import emit_table, parse_config

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# the regression points checked by `validate` when no parameters are given
DEFAULT_VALIDATION_GRID = (
    ProtocolParams(N=0.05, n_th=1.5, eta=0.9, phi=math.pi / 3, G=1.2, chi=0.8),
    ProtocolParams(N=0.2, n_th=0.5, eta=0.7, phi=0.3, G=1.2, chi=0.6),
    ProtocolParams(N=0.01, n_th=3.0, eta=0.99, phi=math.pi, G=1.05, chi=0.9),
)

_FLAG_TO_PARAM = {"N": "N", "nth": "n_th", "eta": "eta", "phi": "phi", "G": "G", "chi": "chi"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("parameters")
    g.add_argument("--N", type=float, help="mean signal photon number")
    g.add_argument("--nth", type=float, help="thermal occupation of the background")
    g.add_argument("--eta", type=float, help="background reflectivity in (0, 1]")
    g.add_argument("--phi", type=float, help="cloak phase shift in radians")
    g.add_argument("--G", type=float, help="Josephson-mixer gain (default 1 + max(N, 1e-3))")
    g.add_argument("--chi", type=float, help="photocounter efficiency (default 1)")
    common.add_argument("--config", help="scenario file (flat key = value)")
    common.add_argument("--dim-cap", type=int, help="cap on the oracle matrix side")
    common.add_argument("--tol", type=float, help="relative tolerance for oracle checks")
    common.add_argument("--format", choices=("text", "csv", "json"), default="text")
    common.add_argument("--out", help="write machine output here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="qicloak", description="Quantum illumination against phase-imprinting cloaks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("compare", parents=[common], help="SNR of every protocol at one point")
    p.add_argument("--oracle", action="store_true", help="also run the Fock-space oracle")

    p = sub.add_parser("sweep", parents=[common], help="grid sweep, axes from --config or --axis")
    p.add_argument("--protocol", choices=engine.PROTOCOLS)
    p.add_argument("--axis", action="append", default=[], metavar="NAME=v1,v2,...")
    p.add_argument("--oracle-stride", type=int, default=0, help="run the oracle on every k-th row")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("validate", parents=[common], help="closed forms against the oracle")
    p.add_argument("--protocols", nargs="+", choices=engine.PROTOCOLS, default=list(engine.PROTOCOLS))

    sub.add_parser("region", parents=[common], help="largest N with a quantum advantage")
    sub.add_parser("threshold", parents=[common], help="minimum photocounter efficiency")
    return parser


def _resolve(args, *, required=("N", "n_th", "eta", "phi"), defaults=None):
    """Config file values, then flags; G and chi get their defaults last."""
    values, protocol, axes, cfg = {}, None, (), None
    if args.config:
        with open(args.config) as fh:
            cfg = parse_config(fh.read())
        values = cfg.params.as_dict()
        if cfg.auto_gain:
            values.pop("G")
        protocol, axes = cfg.protocol, cfg.axes
    for flag, name in _FLAG_TO_PARAM.items():
        v = getattr(args, flag)
        if v is not None:
            values[name] = v
    for name, v in (defaults or {}).items():
        values.setdefault(name, v)
    missing = [n for n in required if n not in values]
    if missing:
        flags = {v: k for k, v in _FLAG_TO_PARAM.items()}
        raise InvalidParameterError("missing " + ", ".join(f"--{flags[m]}" for m in missing))
    auto_gain = "G" not in values
    if auto_gain:
        values["G"] = default_gain(values.get("N", 0.0))
    values.setdefault("chi", 1.0)
    values = {k: values[k] for k in PARAM_NAMES if k in values}
    params = ProtocolParams(**values)
    cap = args.dim_cap or (cfg.oracle_dim_cap if cfg else default_dim_cap())
    tol = args.tol or (cfg.tolerance if cfg else engine.DEFAULT_TOLERANCE)
    if tol <= 0:
        raise InvalidParameterError("--tol must be positive")
    return params, protocol, axes, cap, tol, auto_gain, cfg


def _echo(params, stream):
    text = ", ".join(f"{k}={v:.17g}" for k, v in params.as_dict().items())
    print(f"# params: {text}", file=stream)


def _write(args, text, stdout):
    if args.out:
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
        print(f"wrote {args.out}", file=stdout)
    else:
        stdout.write(text)


def _g(x, spec=".6g"):
    return "-" if x is None else format(x, spec)


def cmd_compare(args, stdout, stderr):
    params, _, _, cap, tol, _, _ = _resolve(args)
    machine = args.format != "text"
    _echo(params, stderr if machine and not args.out else stdout)
    results = []
    for protocol in engine.PROTOCOLS:
        cfg = engine.ScenarioConfig(params, protocol, oracle_enabled=args.oracle, oracle_dim_cap=cap, tolerance=tol)
        results.append(engine.run_scenario(cfg))
    cols = ("protocol", "signal_sq", "noise_var", "snr", "ratio", "ratio_db", "oracle_snr", "oracle_discrepancy")
    records = []
    for r in results:
        records.append(
            {
                "protocol": r.protocol,
                "signal_sq": r.analytic.signal_sq,
                "noise_var": r.analytic.noise_var,
                "snr": r.analytic.snr,
                "ratio": r.ratio_to_classical,
                "ratio_db": r.ratio_db,
                "oracle_snr": r.oracle.snr if r.oracle else None,
                "oracle_discrepancy": r.worst_discrepancy,
            }
        )
    if args.format == "json":
        doc = {"metadata": {"tool": "qicloak", "version": __version__, "params": params.as_dict()}, "rows": records}
        _write(args, json.dumps(doc, indent=2) + "\n", stdout)
    elif args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for rec in records:
            w.writerow([rec[c] if c == "protocol" else ("" if rec[c] is None else format(rec[c], ".17g")) for c in cols])
        _write(args, buf.getvalue(), stdout)
    else:
        print(f"{'protocol':22s} {'S^2':>12s} {'sigma^2':>12s} {'SNR':>12s} {'ratio':>9s} {'dB':>8s}"
              + (f" {'oracle SNR':>12s} {'rel.diff':>9s}" if args.oracle else ""), file=stdout)
        for rec in records:
            line = (f"{rec['protocol']:22s} {rec['signal_sq']:12.6g} {rec['noise_var']:12.6g} {rec['snr']:12.6g}"
                    f" {_g(rec['ratio'], '9.5f'):>9s} {_g(rec['ratio_db'], '8.4f'):>8s}")
            if args.oracle:
                line += f" {_g(rec['oracle_snr'], '12.6g'):>12s} {_g(rec['oracle_discrepancy'], '9.1e'):>9s}"
            print(line, file=stdout)
    return EXIT_OK


def _parse_axis(text):
    if "=" not in text:
        raise InvalidParameterError(f"--axis expects NAME=v1,v2,..., got {text!r}")
    name, values = text.split("=", 1)
    name = _FLAG_TO_PARAM.get(name.strip(), name.strip())
    try:
        vals = tuple(float(v) for v in values.split(",") if v.strip())
    except ValueError:
        raise InvalidParameterError(f"malformed number in --axis {text!r}") from None
    return name, vals


def cmd_sweep(args, stdout, stderr):
    extra = [_parse_axis(a) for a in args.axis]
    params_required = ("N", "n_th", "eta", "phi")
    # axis values stand in for missing scalars
    first = {name: vals[0] for name, vals in extra if vals}
    params, protocol, axes, cap, tol, auto_gain, _ = _resolve(args, required=params_required, defaults=first)
    protocol = args.protocol or protocol or "quantum_quadrature"
    merged = dict(axes)
    merged.update(dict(extra))
    order = [n for n, _ in axes] + [n for n, _ in extra if n not in dict(axes)]
    axes = tuple((n, merged[n]) for n in order)
    if not axes:
        raise InvalidParameterError("sweep needs axes: use sweep.<param> in --config or --axis NAME=v1,v2")
    base = engine.ScenarioConfig(params, protocol, oracle_enabled=False, oracle_dim_cap=cap, tolerance=tol,
                                 auto_gain=auto_gain, axes=axes)
    table = engine.sweep(base, oracle_stride=args.oracle_stride, workers=args.workers)
    fmt = "csv" if args.format == "text" else args.format
    _echo(params, stderr if not args.out else stdout)
    _write(args, emit_table(table, fmt), stdout)
    return EXIT_OK


def cmd_validate(args, stdout, stderr):
    given = args.config or any(getattr(args, f) is not None for f in _FLAG_TO_PARAM)
    grid = [_resolve(args)[0]] if given else list(DEFAULT_VALIDATION_GRID)
    cap = args.dim_cap or default_dim_cap()
    tol = args.tol or engine.DEFAULT_TOLERANCE
    status = EXIT_OK
    for params in grid:
        protocols = list(args.protocols)
        if params.G <= 1.0:
            protocols = [p for p in protocols if p not in engine.JM_PROTOCOLS]
        _echo(params, stdout)
        report = engine.cross_validate(params, protocols, tol, dim_cap=cap)
        for line in report.lines():
            print(line, file=stdout)
        if report.adopted_mean_variant:
            print(f"<O> coefficient backed by the oracle: {report.adopted_mean_variant}", file=stdout)
        if any(c.status == "fail" for c in report.checks):
            status = EXIT_FAIL
        elif report.inconclusive and status == EXIT_OK:
            status = EXIT_NUMERIC
    print("validation " + ("passed" if status == EXIT_OK else "FAILED"), file=stdout)
    return status


def cmd_region(args, stdout, stderr):
    params, *_ = _resolve(args, required=("eta", "n_th"), defaults={"N": 0.0, "phi": math.pi})
    _echo(params, stdout)
    closed = analytic.gain_region_upper_bound(params.eta, params.n_th)
    root = engine.find_gain_boundary(params.eta, params.n_th, params.phi)
    print(f"N* (bisection, phi={params.phi:.6g}): {root:.12g}", file=stdout)
    print(f"N* (closed form, phi=pi):       {closed:.12g}", file=stdout)
    return EXIT_OK


def cmd_threshold(args, stdout, stderr):
    params, *_ = _resolve(args, defaults={"phi": 0.1})
    _echo(params, stdout)
    b = engine.find_efficiency_boundary(params)
    print(f"chi* (bisection):  {b.chi:.12g}", file=stdout)
    if b.asymptotic is None:
        print(f"chi* (asymptotic): n/a ({b.asymptotic_note})", file=stdout)
    else:
        print(f"chi* (asymptotic): {b.asymptotic:.12g}", file=stdout)
    return EXIT_OK


_COMMANDS = {
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "region": cmd_region,
    "threshold": cmd_threshold,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=stderr)
    try:
        return _COMMANDS[args.command](args, stdout, stderr)
    except (ConfigError, InvalidParameterError) as exc:
        print(f"qicloak {args.command}: error: {exc}", file=stderr)
        return EXIT_USAGE
    except (TruncationOverflowError, NoBoundaryError) as exc:
        print(f"qicloak {args.command}: numerical failure: {exc}", file=stderr)
        return EXIT_NUMERIC
    except QiCloakError as exc:
        print(f"qicloak {args.command}: {exc}", file=stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"qicloak {args.command}: {exc}", file=stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
