"""Convergence-rate plots and snapshot image grids.

Inputs are the solver's files only (CSV tables, VTK snapshots); outputs
are PNGs with fixed DPI and stripped metadata, so identical inputs give
identical bytes.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .vtkio import read_structured_points

DPI = 150
VARIABLES = ("u", "phi", "q", "p")
REQUIRED_COLUMNS = ("k", "level", "h_over_sqrt2", "err_u", "err_phi",
                    "err_q", "err_p")


@dataclass
class PlotSpec:
    """What to plot and where to put it."""

    inputs: list
    out_path: str
    variables: tuple = VARIABLES
    reference_slopes: tuple = ()     # e.g. (k+1, k+2); derived from k if empty
    layout: tuple = None             # (rows, cols) for snapshot grids
    dpi: int = DPI


def _read_table(csv_path):
    with open(csv_path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
        header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise ValueError(
            f"{csv_path}: missing required columns {missing}; found "
            f"{header}")
    return rows


def fit_convergence_slopes(csv_path):
    """Least-squares slopes of log(err) vs log(h) per variable.

    Returns {variable: slope}; a single-row table gives no fits.
    """
    rows = _read_table(csv_path)
    if len(rows) < 2:
        return {}
    h = np.array([float(r["h_over_sqrt2"]) for r in rows])
    out = {}
    for var in VARIABLES:
        e = np.array([float(r[f"err_{var}"]) for r in rows])
        out[var] = float(np.polyfit(np.log(h), np.log(e), 1)[0])
    return out


def plot_convergence(csv_path, out_path, spec=None):
    """Log-log error-vs-h panels, one per variable, fitted slope in the
    legend and k+1 / k+2 reference slopes as dashed guides."""
    rows = _read_table(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: table has no data rows")
    slopes = fit_convergence_slopes(csv_path)
    if not slopes:
        warnings.warn(f"{csv_path}: single data row, plotting points only "
                      "(no slope fit)")
    k = int(float(rows[0]["k"]))
    ref_slopes = (spec.reference_slopes if spec and spec.reference_slopes
                  else (k + 1, k + 2))
    h = np.array([float(r["h_over_sqrt2"]) for r in rows])

    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    for ax, var in zip(axes.ravel(), VARIABLES):
        e = np.array([float(r[f"err_{var}"]) for r in rows])
        label = var if var not in slopes else \
            f"{var}: slope {slopes[var]:.2f}"
        ax.loglog(h, e, "ko-", label=label)
        for ref in ref_slopes:
            guide = e[0] * (h / h[0]) ** ref
            ax.loglog(h, guide, "--", lw=0.8,
                      label=f"order {ref}")
        ax.set_xlabel("h / sqrt(2)")
        ax.set_ylabel(f"L2 error ({var})")
        ax.legend(fontsize=8)
        ax.grid(True, which="both", lw=0.3, alpha=0.5)
    fig.suptitle(f"convergence, k = {k}")
    fig.tight_layout()
    fig.savefig(out_path, dpi=spec.dpi if spec else DPI,
                metadata={"Software": None})
    plt.close(fig)
    for var, slope in slopes.items():
        print(f"fitted slope {var}: {slope:.3f}")
    return out_path


def render_snapshots(vtk_paths, layout, out_path, spec=None):
    """Tile snapshot grids with time labels; diverging color scale fixed
    to [-1, 1].

    layout is (rows, cols); None picks a single row.  All grids must have
    the same shape, otherwise the offending files are listed.
    """
    if not vtk_paths:
        raise ValueError("no snapshot files given")
    grids, metas = [], []
    for p in vtk_paths:
        g, m = read_structured_points(p)
        grids.append(g)
        metas.append(m)
    shapes = {g.shape for g in grids}
    if len(shapes) > 1:
        detail = ", ".join(f"{m['path']}: {g.shape}"
                           for g, m in zip(grids, metas))
        raise ValueError(f"snapshot grids differ in size: {detail}")

    if layout is None:
        layout = (1, len(grids))
    rows, cols = layout
    if rows * cols < len(grids):
        raise ValueError(f"layout {rows}x{cols} cannot hold "
                         f"{len(grids)} snapshots")

    fig, axes = plt.subplots(rows, cols,
                             figsize=(2.4 * cols, 2.6 * rows),
                             squeeze=False)
    im = None
    for i, ax in enumerate(axes.ravel()):
        if i >= len(grids):
            ax.axis("off")
            continue
        im = ax.imshow(grids[i], origin="lower", cmap="RdBu_r",
                       vmin=-1.0, vmax=1.0, extent=(0, 1, 0, 1))
        t = metas[i]["t"]
        ax.set_title("" if t is None else f"t = {t:g}", fontsize=9)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.colorbar(im, ax=axes, shrink=0.8, ticks=[-1, -0.5, 0, 0.5, 1])
    fig.savefig(out_path, dpi=spec.dpi if spec else DPI,
                metadata={"Software": None})
    plt.close(fig)
    return out_path


def parse_layout(text):
    r, c = text.lower().split("x")
    return int(r), int(c)
