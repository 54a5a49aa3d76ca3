"""Command-line front end.

Subcommands: ``calibrate``, ``estimate``, ``simulate``, ``surface`` and
``oracle run-all``. Exit codes: 0 success, 1 domain or numeric failure,
2 usage error (bad flags, unreadable inputs, malformed prior spec).
``H2AXDOSE_SEED`` and ``H2AXDOSE_THREADS`` supply defaults for ``--seed``
and ``--threads``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .artifact import (
    DENSITY_HEADER,
    SURFACE_HEADER,
    CalibrationArtifact,
    atomic_write_text,
    format_csv,
    ingest_calibration_csv,
    read_artifact,
    read_design_csv,
    read_params_file,
    write_artifact,
    write_calibration_csv,
)
from .calibrate import FitConfig, calibrate, select_model
from .errors import DomainError, H2AXDoseError, ParseError
from .estimate import (
    TestSummary,
    make_grid,
    marginal_dose_density_quadrature,
    marginal_dose_samples_mc,
)
from .model import DEFAULT_MAX_COUNT, sample_synthetic
from .priors import TimePrior
from .surface import surface_grid

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2
ENV_SEED = "H2AXDOSE_SEED"
ENV_THREADS = "H2AXDOSE_THREADS"


class UsageError(Exception):
    pass


def _env_int(name, default):
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {raw!r}") from None


def _k_range(text):
    lo, sep, hi = text.partition("..")
    try:
        ks = list(range(int(lo), int(hi) + 1)) if sep else [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 2..5, got {text!r}") from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("K values must be positive")
    return ks


def _time_prior(text):
    try:
        return TimePrior.parse(text)
    except DomainError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _grid(text):
    try:
        lo, hi, step = (float(x) for x in text.split(","))
        return make_grid(lo, hi, step)
    except (ValueError, DomainError) as exc:
        raise argparse.ArgumentTypeError(f"--grid expects lo,hi,step: {exc}") from None


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _level(text):
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError("--level must lie in (0, 1)")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="h2axdose", description="Dose estimation from foci counts.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit the calibration surface and write an artifact")
    p.add_argument("csv", help="calibration CSV (dose_gy,time_h,foci_count[,cell_count])")
    k = p.add_mutually_exclusive_group()
    k.add_argument("--k", type=int, help="number of mixture components for a single fit")
    k.add_argument("--k-sweep", type=_k_range, help="candidate K values for AIC selection, e.g. 2..5")
    u = p.add_mutually_exclusive_group()
    u.add_argument("--shared-u", dest="u_mode", action="store_const", const="shared",
                   help="one time exponent u for the background term (default)")
    u.add_argument("--per-component-u", dest="u_mode", action="store_const", const="separate",
                   help="a separate u per component")
    u.add_argument("--compare-u", dest="u_mode", action="store_const", const="both",
                   help="fit both variants and let AIC choose")
    p.add_argument("--starts", type=int, default=32)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--max-count", type=int, default=DEFAULT_MAX_COUNT)
    p.add_argument("--out", required=True, help="artifact path")

    p = sub.add_parser("estimate", help="dose posterior for a patient sample")
    p.add_argument("--calibration", required=True, help="artifact from the calibrate command")
    p.add_argument("--mean", type=float, required=True, help="mean foci per cell of the test sample")
    p.add_argument("--se", type=float, required=True, help="standard error of that mean")
    p.add_argument("--n", type=int, help="cells scored (used for the small-sample warning)")
    p.add_argument("--time-prior", type=_time_prior, required=True,
                   help="uniform:p,q | beta:alpha,beta,p,q | point:t (hours)")
    p.add_argument("--method", choices=("quad", "mc"), default="quad")
    p.add_argument("--draws", type=int, default=100_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--level", type=_level, default=0.95)
    p.add_argument("--grid", type=_grid, help="dose grid lo,hi,step in Gy")
    p.add_argument("--truncate-nonnegative", action="store_true")
    p.add_argument("--out-density", help="write the density grid as dose_gy,density")

    p = sub.add_parser("simulate", help="draw a synthetic calibration CSV")
    p.add_argument("--params", required=True, help="artifact or coefficients JSON")
    p.add_argument("--design", required=True, help="CSV of dose_gy,time_h,cells")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-count", type=int, default=DEFAULT_MAX_COUNT)
    p.add_argument("--out", required=True)

    p = sub.add_parser("surface", help="tabulate the calibrated mean surface")
    p.add_argument("--calibration", required=True)
    p.add_argument("--doses", type=_float_list, required=True)
    p.add_argument("--times", type=_float_list, required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("oracle", help="independent numerical cross-checks")
    osub = p.add_subparsers(dest="oracle_command", required=True)
    q = osub.add_parser("run-all")
    q.add_argument("--seed", type=int)
    q.add_argument("--draws", type=int, default=10**6, help="draws per ratio-density histogram")
    return parser


def _seed(args):
    return args.seed if args.seed is not None else _env_int(ENV_SEED, 0)


def _threads(args):
    threads = args.threads if args.threads is not None else _env_int(ENV_THREADS, 1)
    if threads < 1:
        raise UsageError("--threads must be at least 1")
    return threads


def _coefficient_summary(res):
    w, a, c, u, v = res.params.arrays()
    sd = np.sqrt(np.diag(res.covariance))
    lines = [f"{'k':>2} {'w':>10} {'a':>12} {'c':>12} {'u':>10} {'v':>10}"]
    for k in range(res.K):
        lines.append(f"{k + 1:>2} {w[k]:>10.5f} {a[k]:>12.6g} {c[k]:>12.6g} {u[k]:>10.5f} {v[k]:>10.5f}")
    lines.append("free-coordinate standard errors:")
    lines.extend(f"  {name:<8} {x:>12.6g} +/- {s:.3g}" for name, x, s in zip(res.parameter_order, res.free_mode, sd))
    return "\n".join(lines)


def cmd_calibrate(args, out):
    if args.k is not None and args.k < 1:
        raise UsageError("--k must be positive")
    data = ingest_calibration_csv(args.csv, max_count=args.max_count)
    config = FitConfig(starts=args.starts, seed=_seed(args), threads=_threads(args))
    u_mode = args.u_mode or "shared"
    variants = {"shared": (True,), "separate": (False,), "both": (True, False)}[u_mode]
    Ks = args.k_sweep if args.k_sweep else [args.k if args.k is not None else 4]
    selection = select_model(data, Ks, config, shared_u_variants=variants)
    res = selection.best
    metadata = {
        "software": f"h2axdose {__version__}",
        "provenance": data.provenance,
        "n_cells": len(data),
        "fit": {"starts": config.starts, "seed": config.seed, "gtol": config.gtol,
                "hessian_step": config.hessian_step, "candidates_K": Ks, "u_mode": u_mode},
    }
    write_artifact(args.out, CalibrationArtifact(res, metadata))
    print(selection.format_table(), file=out)
    print(f"selected K={res.K} shared_u={res.shared_u} p={res.p} AIC={res.aic:.4f}", file=out)
    print(_coefficient_summary(res), file=out)
    for msg in res.warnings:
        print(f"warning: {msg}", file=sys.stderr)
    print(f"wrote {args.out}", file=out)
    return EXIT_OK


def cmd_estimate(args, out):
    art = read_artifact(args.calibration)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        test = TestSummary(args.n, args.mean, args.se)
        if args.method == "quad":
            post = marginal_dose_density_quadrature(art.result, test, args.time_prior, dose_grid=args.grid,
                                                    level=args.level, truncate_nonnegative=args.truncate_nonnegative)
        else:
            _threads(args)
            post = marginal_dose_samples_mc(art.result, test, args.time_prior, draws=args.draws, seed=_seed(args),
                                            level=args.level, dose_grid=args.grid,
                                            truncate_nonnegative=args.truncate_nonnegative)
    lines = [
        f"method: {'quadrature' if args.method == 'quad' else 'monte-carlo'}",
        f"time_prior: {args.time_prior}",
        f"median_gy: {post.median:.6f}",
        f"mean_gy: {post.mean:.6f}",
        f"level: {post.level!r}",
        f"ci_lower_gy: {post.lower:.6f}",
        f"ci_upper_gy: {post.upper:.6f}",
        f"truncated_nonnegative: {str(post.truncated).lower()}",
    ]
    if args.method == "mc":
        lines += [f"draws: {args.draws}", f"seed: {_seed(args)}", f"rejection_fraction: {post.rejection_fraction:.6g}"]
    if args.out_density:
        atomic_write_text(args.out_density, format_csv(DENSITY_HEADER, zip(post.doses, post.density)))
        lines.append(f"density_file: {args.out_density}")
    print("\n".join(lines), file=out)
    for msg in list(post.warnings) + [str(w.message) for w in caught]:
        print(f"warning: {msg}", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args, out):
    params = read_params_file(args.params)
    design = read_design_csv(args.design)
    for dose, time, cells in design:
        if cells == 0:
            print(f"warning: design point dose={dose} time={time} has 0 cells; skipped", file=sys.stderr)
    data = sample_synthetic(params, design, _seed(args), max_count=args.max_count)
    write_calibration_csv(args.out, data)
    print(f"wrote {len(data)} cells to {args.out}", file=out)
    return EXIT_OK


def cmd_surface(args, out):
    art = read_artifact(args.calibration)
    if not args.doses or not args.times:
        raise UsageError("--doses and --times need at least one value")
    rows = surface_grid(art.result, args.doses, args.times)
    atomic_write_text(args.out, format_csv(SURFACE_HEADER, rows))
    print(f"wrote {len(rows)} rows to {args.out}", file=out)
    return EXIT_OK


def cmd_oracle(args, out):
    from .oracle import run_all

    seed = _seed(args)
    reports = run_all(seed, ratio_draws=args.draws)
    print("\t".join(["check", "statistic", "threshold", "result", "seed", "sample_size"]), file=out)
    for r in reports:
        print("\t".join(r.row()), file=out)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_DOMAIN


COMMANDS = {"calibrate": cmd_calibrate, "estimate": cmd_estimate, "simulate": cmd_simulate,
            "surface": cmd_surface, "oracle": cmd_oracle}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args, out)
    except (UsageError, ParseError) as exc:
        print(f"h2axdose {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except H2AXDoseError as exc:
        print(f"h2axdose {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        for line in getattr(exc, "diagnostics", []):
            print(f"  {line}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"h2axdose {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
