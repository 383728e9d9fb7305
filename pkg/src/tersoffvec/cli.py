"""Command-line front end: ``run``, ``verify`` and ``bench``.

Exit codes: 0 success, 1 verification failure, 2 input or configuration
error, 3 numerical error. Every failure prints one line to stderr of the form
``tersoffvec <subcommand>: <stage>: <message>``.
"""

from __future__ import annotations

import argparse
import io
import logging
import sys

from .engine import RunConfig, init_velocities, make_diamond_lattice, run
from .errors import ConfigurationError, TersoffError
from .model import MASSES, PrecisionMode, read_param_file, silicon_params
from .potential_opt import SCHEMES
from .simd import SOFTWARE_WIDTHS

PRECISIONS = [m.value for m in PrecisionMode]
BENCH_HEADER = "scheme,width,precision,ns_per_day,speedup_vs_ref"


class CliFailure(Exception):
    def __init__(self, stage, message, code=2):
        super().__init__(message)
        self.stage = stage
        self.code = code


def _stage(stage, fn, *args, **kwargs):
    """Call ``fn`` and tag any package error with the failing stage."""
    try:
        return fn(*args, **kwargs)
    except TersoffError as exc:
        raise CliFailure(stage, str(exc), exc.exit_code) from exc


def _load_params(path):
    if path is None:
        return silicon_params()
    try:
        return read_param_file(path)
    except OSError as exc:
        raise CliFailure("loading parameters",
                         f"cannot read parameter file {path!r}: {exc.strerror or exc}") from exc
    except TersoffError as exc:
        raise CliFailure("loading parameters", f"{path}: {exc}", exc.exit_code) from exc


def _species_mass(params):
    name = params.species_names[0]
    if name not in MASSES:
        raise CliFailure("building lattice", f"no built-in mass for species {name!r}")
    return MASSES[name]


def _config(args, **override):
    fields = dict(steps=args.steps, dt=args.dt, skin=args.skin, k_max=args.kmax,
                  scheme=args.scheme, precision=args.precision, backend_width=args.width,
                  workers=args.workers, seed=args.seed, thermo_every=args.thermo_every,
                  temperature=args.temp)
    fields.update(override)
    return _stage("configuration", RunConfig, **fields)


def _system(args, params, config):
    system = _stage("building lattice", make_diamond_lattice, *args.cells,
                    mass=_species_mass(params), min_cutoff=params.r_cut_max + config.skin)
    _stage("building lattice", init_velocities, system, config.temperature, config.seed)
    return system


def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliFailure("writing output",
                         f"cannot write {path!r}: {exc.strerror or exc}") from exc


def cmd_run(args):
    params = _load_params(args.params)
    config = _config(args)
    system = _system(args, params, config)
    report = _stage("simulation", run, system, config, params)
    _write(args.out, report.to_csv())
    return 0


def cmd_verify(args):
    from .verify import run_suite

    params = _load_params(args.params)
    results = _stage("verification", run_suite, params, args.seed, args.cells)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def bench_matrix(widths, precisions, scheme="auto"):
    """Rows of ``(scheme, width, precision)``: Ref first, then every combination."""
    rows = [("ref", 1, PrecisionMode.REF)]
    for w in widths:
        for p in precisions:
            rows.append((scheme, w, PrecisionMode.parse(p)))
    return rows


def cmd_bench(args):
    params = _load_params(args.params)
    widths = args.width if isinstance(args.width, list) else [args.width]
    precisions = args.precision if isinstance(args.precision, list) else [args.precision]
    if "ref" in precisions:
        raise CliFailure("configuration", "the Ref row is always included; "
                         "pass optimized precisions only")
    out = io.StringIO()
    out.write(BENCH_HEADER + "\n")
    ref_ns = None
    for scheme, w, prec in bench_matrix(widths, precisions, args.scheme):
        config = _config(args, scheme=scheme, backend_width=w, precision=prec,
                         thermo_every=max(args.steps, 1))
        system = _system(args, params, config)
        report = _stage("simulation", run, system, config, params)
        ns = report.ns_per_day
        if ref_ns is None:
            ref_ns = ns
        speedup = 1.0 if scheme == "ref" else (ns / ref_ns if ref_ns else float("nan"))
        out.write(f"{report.scheme},{report.width},{report.precision},{ns!r},{speedup!r}\n")
        logging.getLogger(__name__).info("%s W=%d %s: %.4g ns/day", report.scheme, w,
                                         report.precision, ns)
    _write(args.out, out.getvalue())
    return 0


def _add_common(p, multi=False):
    p.add_argument("--params", metavar="PATH", default=None,
                   help="Tersoff parameter file (default: bundled Si)")
    p.add_argument("--cells", nargs=3, type=int, metavar=("NX", "NY", "NZ"), default=[4, 4, 4])
    p.add_argument("--seed", type=int, default=12345)
    if multi is None:
        return
    p.add_argument("--steps", type=int, default=100 if multi else 1000)
    p.add_argument("--dt", type=float, default=0.001, metavar="PS")
    p.add_argument("--skin", type=float, default=1.0, metavar="A")
    p.add_argument("--kmax", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--temp", type=float, default=300.0, metavar="K",
                   help="initial temperature")
    p.add_argument("--thermo-every", type=int, default=100, metavar="N")
    p.add_argument("--out", metavar="PATH", default=None, help="CSV output (default: stdout)")
    if multi:
        p.add_argument("--scheme", default="auto", choices=["auto", "v1", "v2", "v3"])
        p.add_argument("--width", type=int, nargs="+", default=list(SOFTWARE_WIDTHS))
        p.add_argument("--precision", nargs="+", default=["double", "single", "mixed"],
                       choices=PRECISIONS[1:])
    else:
        p.add_argument("--scheme", default="auto", choices=["auto", *SCHEMES])
        p.add_argument("--width", type=int, default=4)
        p.add_argument("--precision", default="double", choices=PRECISIONS)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="tersoffvec", description="Vectorized Tersoff molecular dynamics.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an NVE simulation and write thermo CSV")
    _add_common(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="run the property suite")
    _add_common(p, multi=None)
    p.set_defaults(func=cmd_verify, seed=1)
    p = sub.add_parser("bench", help="time a scheme x width x precision matrix")
    _add_common(p, multi=True)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliFailure as exc:
        print(f"tersoffvec {args.command}: {exc.stage}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigurationError as exc:
        print(f"tersoffvec {args.command}: configuration: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
