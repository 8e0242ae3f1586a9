"""Command line for the offline plots."""

import argparse
import sys

from .plots import parse_layout, plot_convergence, render_snapshots


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="plotkit", description="plots for HDG Cahn-Hilliard outputs")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="log-log error panels from a "
                                           "convergence CSV")
    p.add_argument("csv")
    p.add_argument("out")

    p = sub.add_parser("snapshots", help="tile VTK snapshots into a grid")
    p.add_argument("out")
    p.add_argument("vtk", nargs="+")
    p.add_argument("--layout", default=None,
                   help="grid as ROWSxCOLS, e.g. 3x4")

    args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    try:
        if args.command == "convergence":
            plot_convergence(args.csv, args.out)
        else:
            layout = parse_layout(args.layout) if args.layout else None
            render_snapshots(args.vtk, layout, args.out)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
