"""Offline plotting for the HDG Cahn-Hilliard solver's output files.

Reads the solver's convergence CSV tables and legacy-ASCII VTK
structured-points snapshots; never imports the solver itself.
"""

from .plots import PlotSpec, plot_convergence, render_snapshots
from .vtkio import read_structured_points

__version__ = "0.1.0"

__all__ = ["PlotSpec", "plot_convergence", "render_snapshots",
           "read_structured_points"]
