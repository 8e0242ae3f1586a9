"""Command-line entry point: convergence studies, circular-convection
simulations, and elliptic-projection studies, with CSV/VTK output.

Every run writes a manifest (resolved configuration, package version,
seed, argv) beside its outputs, and re-running from the same manifest
reproduces byte-identical CSVs.

Exit codes: 0 success, 2 usage error, 3 solver failure, 4 check failure.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, experiments, projections
from .errors import ConvergenceError, SolverError, StepError
from .stepper import RunConfig

USAGE_ERROR, SOLVER_ERROR, CHECK_ERROR = 2, 3, 4


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    xf = float(x)
    if np.isnan(xf):
        return ""
    return f"{xf:.5e}"


def emit_csv(header, rows, path):
    """Write rows (dicts or sequences) under the given header line.

    Floats use '.' decimals in scientific notation with 6 significant
    digits; output is byte-deterministic for identical inputs.
    """
    names = header.split(",")
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            vals = [row[n] for n in names] if isinstance(row, dict) else row
            fh.write(",".join(_fmt(v) for v in vals) + "\n")
    return path


def emit_snapshot(grid, path, t=None, csv_path=None):
    """Write a lattice sample as a legacy-ASCII VTK structured-points file
    (and optionally as CSV)."""
    n = grid.shape[0]
    if grid.shape != (n, n):
        raise ValueError("snapshot grid must be square")
    label = "u" if t is None else f"u t={t!r}"
    with open(path, "w", newline="\n") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(label + "\n")
        fh.write("ASCII\n")
        fh.write("DATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {n} {n} 1\n")
        fh.write(f"ORIGIN {0.5 / n!r} {0.5 / n!r} 0\n")
        fh.write(f"SPACING {1.0 / n!r} {1.0 / n!r} 1\n")
        fh.write(f"POINT_DATA {n * n}\n")
        fh.write("SCALARS u double 1\n")
        fh.write("LOOKUP_TABLE default\n")
        for row in grid:
            fh.write(" ".join(f"{float(v)!r}" for v in row) + "\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="\n") as fh:
            for row in grid:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    return path


def _parse_levels(text):
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(p) for p in text.split(",") if p]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hdgch",
        description="HDG solver for the convective Cahn-Hilliard equation")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--k", type=int, default=0,
                       help="polynomial order of the trace space")
        p.add_argument("--scheme", choices=("centered", "upwind"),
                       default="centered")
        p.add_argument("--alpha", type=float, default=10.0)
        p.add_argument("--tau-c", dest="tau_c", type=float, default=10.0)
        p.add_argument("--pe", type=float, default=3.0)
        p.add_argument("--eps", type=float, default=2.0)
        p.add_argument("--dt", type=float, default=None)
        p.add_argument("--dt-rule", dest="dt_rule",
                       choices=("table", "fixed"), default="table",
                       help="'table' ties dt to 2(h/sqrt2)^(k+2)")
        p.add_argument("--T", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--preconditioner",
                       choices=("none", "block_jacobi"), default="none")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--check", action="store_true",
                       help="compare observed rates against thresholds; "
                            "exit 4 on failure")

    p = sub.add_parser("convergence", help="manufactured-solution study")
    common(p)
    p.add_argument("--levels", default="3..5",
                   help="mesh levels, e.g. 3..5 or 3,4,5")

    p = sub.add_parser("simulate", help="circular-convection simulation")
    common(p)
    p.add_argument("--case", choices=("cross", "disk"), default="cross")
    p.add_argument("--h", type=float, default=None,
                   help="target mesh size; the nearest level with "
                        "h/sqrt2 = 2^-L is used")
    p.add_argument("--level", type=int, default=None)
    p.add_argument("--full-scale", action="store_true",
                   help="paper-scale horizon instead of the desk default")
    p.add_argument("--snap-times", default=None,
                   help="comma-separated snapshot times")
    p.add_argument("--lattice", type=int, default=256)

    p = sub.add_parser("project", help="elliptic-projection study")
    common(p)
    p.add_argument("--levels", default="3..5")

    return parser


def parse_config(argv):
    """Parse arguments; unknown flags are rejected by argparse."""
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        raise SystemExit(USAGE_ERROR)
    try:
        return parser.parse_args(argv)
    except SystemExit as exc:
        raise SystemExit(USAGE_ERROR if exc.code else 0)


def _run_config(args):
    return RunConfig(
        k=args.k, pe=args.pe, eps=args.eps, alpha=args.alpha,
        tau_c=args.tau_c, dt=args.dt if args.dt else 1e-3,
        T=args.T if args.T else 0.5, scheme=args.scheme,
        preconditioner=args.preconditioner, seed=args.seed,
        threads=args.threads)


def _write_manifest(args, out_dir, extra=None):
    manifest = {
        "version": __version__,
        "argv": list(args._argv),
        "command": args.command,
        "config": {k: v for k, v in sorted(vars(args).items())
                   if not k.startswith("_")},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    return path


RATE_THRESHOLDS = {
    # scheme, k -> (u_min, phi_min, q_range, p_range) on the finest pair
    ("centered", 0): (1.9, 1.9, (0.9, 1.1), (0.9, 1.1)),
    ("centered", 1): (2.85, 2.85, (1.85, 2.15), (1.85, 2.15)),
    ("upwind", 1): (2.85, None, (1.85, 2.15), (1.85, 2.15)),
}


def _check_rates(rows, scheme, k):
    """True when the finest-pair rates clear the acceptance thresholds."""
    last = rows[-1]
    if scheme == "upwind" and k == 0:
        return last["rate_phi"] <= 1.3
    key = (scheme, k)
    if key not in RATE_THRESHOLDS:
        return True
    u_min, phi_min, q_rng, p_rng = RATE_THRESHOLDS[key]
    ok = last["rate_u"] >= u_min
    if phi_min is not None:
        ok = ok and last["rate_phi"] >= phi_min
    ok = ok and q_rng[0] <= last["rate_q"] <= q_rng[1]
    ok = ok and p_rng[0] <= last["rate_p"] <= p_rng[1]
    return ok


def cmd_convergence(args):
    levels = _parse_levels(args.levels)
    cfg = _run_config(args)
    case = experiments.vortex_case()
    if args.T:
        case = experiments.ManufacturedCase(
            **{**case.__dict__, "T": args.T})
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args, args.out)

    def progress(row):
        print(f"level {row['level']}: err_u={row['err_u']:.3e} "
              f"rate_u={row['rate_u']:.2f}", flush=True)

    rows = experiments.run_convergence(cfg, levels, case,
                                       dt_rule=args.dt_rule,
                                       progress=progress)
    path = emit_csv(experiments.CONVERGENCE_CSV_HEADER, rows,
                    os.path.join(args.out, "convergence.csv"))
    print(f"wrote {path}")
    if args.check and not _check_rates(rows, args.scheme, args.k):
        print("rate check FAILED", file=sys.stderr)
        return CHECK_ERROR
    return 0


def _sim_level(args):
    if args.level is not None:
        return args.level
    if args.h is not None:
        return int(round(-np.log2(args.h / np.sqrt(2.0))))
    return None


def cmd_simulate(args):
    maker = experiments.cross_case if args.case == "cross" \
        else experiments.disk_case
    case = maker(reduced=not args.full_scale, level=_sim_level(args),
                 T=args.T, dt=args.dt if args.dt else 1e-3, seed=args.seed)
    if args.snap_times:
        case.snapshot_times = tuple(
            float(t) for t in args.snap_times.split(","))
    cfg = _run_config(args)
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args, args.out, extra={
        "case": args.case, "level": case.level, "T": case.T, "dt": case.dt})

    def writer(snap):
        base = os.path.join(args.out, f"snapshot_{snap.step:08d}")
        emit_snapshot(snap.grid, base + ".vtk", t=snap.t,
                      csv_path=base + ".csv")
        print(f"snapshot t={snap.t:g} -> {base}.vtk", flush=True)

    snaps, diag = experiments.run_simulation(case, cfg,
                                             snapshot_writer=writer,
                                             lattice=args.lattice)
    emit_csv(experiments.DIAGNOSTICS_CSV_HEADER, diag,
             os.path.join(args.out, "diagnostics.csv"))
    print(f"{len(snaps)} snapshots, {len(diag) - 1} steps")
    return 0


def cmd_project(args):
    levels = _parse_levels(args.levels)
    cfg = _run_config(args)
    case = experiments.vortex_case()
    os.makedirs(args.out, exist_ok=True)
    _write_manifest(args, args.out)
    rows = projections.projection_error_study(case, levels, cfg)
    path = emit_csv(projections.PROJECTION_CSV_HEADER, rows,
                    os.path.join(args.out, "projection.csv"))
    print(f"wrote {path}")
    if args.check:
        last = rows[-1]
        rate_phi = last[7]
        ok = rate_phi <= 1.3 if (args.scheme == "upwind" and args.k == 0) \
            else rate_phi >= (1.85 if args.k == 0 else 2.8)
        if not ok:
            print("projection rate check FAILED", file=sys.stderr)
            return CHECK_ERROR
    return 0


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_config(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args._argv = argv
    try:
        if args.command == "convergence":
            return cmd_convergence(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        if args.command == "project":
            return cmd_project(args)
    except (SolverError, ConvergenceError, StepError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return SOLVER_ERROR
    return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
