"""Minimal reader for the solver's legacy-ASCII VTK structured-points
snapshot files."""

import numpy as np


def read_structured_points(path):
    """Read one snapshot.

    Returns (grid, meta) with grid of shape (ny, nx) and meta holding the
    title line (which carries the snapshot time as 't=<value>'), origin
    and spacing.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# vtk DataFile"):
        raise ValueError(f"{path}: not a VTK data file")
    meta = {"title": lines[1].strip(), "path": str(path)}
    if lines[2].strip() != "ASCII":
        raise ValueError(f"{path}: only ASCII VTK files are supported")
    if lines[3].strip() != "DATASET STRUCTURED_POINTS":
        raise ValueError(f"{path}: expected STRUCTURED_POINTS, got "
                         f"{lines[3].strip()!r}")
    dims = None
    data_start = None
    npoints = None
    for i, ln in enumerate(lines[4:], start=4):
        key = ln.split()[0] if ln.split() else ""
        if key == "DIMENSIONS":
            dims = tuple(int(v) for v in ln.split()[1:])
        elif key == "ORIGIN":
            meta["origin"] = tuple(float(v) for v in ln.split()[1:])
        elif key == "SPACING":
            meta["spacing"] = tuple(float(v) for v in ln.split()[1:])
        elif key == "POINT_DATA":
            npoints = int(ln.split()[1])
        elif key == "LOOKUP_TABLE":
            data_start = i + 1
            break
    if dims is None or data_start is None or npoints is None:
        raise ValueError(f"{path}: missing structured-points header fields")
    nx, ny = dims[0], dims[1]
    values = np.array([float(v) for ln in lines[data_start:]
                       for v in ln.split()])
    if values.size != npoints or npoints != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} values, found "
                         f"{values.size}")
    meta["t"] = _time_from_title(meta["title"])
    return values.reshape(ny, nx), meta


def _time_from_title(title):
    for tok in title.split():
        if tok.startswith("t="):
            try:
                return float(tok[2:])
            except ValueError:
                return None
    return None
