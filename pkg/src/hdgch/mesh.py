"""Structured triangulations of the unit square with face topology.

Meshes are built by splitting an n-by-n grid of squares (n = 2**level) into
two triangles each along the SW-NE diagonal.  Every face stores one canonical
unit normal; each adjacent cell records a sign telling whether its outward
normal agrees with the stored one.  This gives exactly one set of trace
degrees of freedom per face, which is what a hybridized method needs.

All arrays are frozen after construction, so a Mesh can be shared freely
between workers.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ResourceError

MAX_LEVEL = 12


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh of [0,1]^2 with oriented faces.

    Attributes
    ----------
    vertices : (nv, 2) float array
    cells : (nc, 3) int array
        Vertex indices, counterclockwise.
    faces : (nf, 2) int array
        Vertex index pairs (lower index first).
    face_normals : (nf, 2) float array
        Canonical unit normal of each face.
    cell_faces : (nc, 3) int array
        Face ids of the three edges of each cell (edge m joins local
        vertices m and m+1 mod 3).
    cell_face_signs : (nc, 3) int array
        +1 where the cell's outward normal equals the stored face normal,
        -1 where it is opposite.
    boundary : (nf,) bool array
    """

    level: int
    vertices: np.ndarray
    cells: np.ndarray
    faces: np.ndarray
    face_normals: np.ndarray
    face_lengths: np.ndarray
    face_midpoints: np.ndarray
    cell_faces: np.ndarray
    cell_face_signs: np.ndarray
    boundary: np.ndarray
    cell_areas: np.ndarray
    face_cells: np.ndarray = field(repr=False)

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_faces(self):
        return self.faces.shape[0]

    @property
    def h(self):
        """Largest face length (the mesh size h, with h/sqrt(2) = 2**-level)."""
        return float(self.face_lengths.max())

    def cell_vertices(self, cell):
        return self.vertices[self.cells[cell]]


def build_structured_mesh(level):
    """Uniform triangulation of [0,1]^2 at the given refinement level.

    Produces 2 * 4**level congruent right triangles; deterministic vertex,
    cell and face ordering.

    Raises
    ------
    ResourceError
        If level exceeds MAX_LEVEL.
    """
    if level < 0 or int(level) != level:
        raise ValueError(f"level must be a nonnegative integer, got {level}")
    if level > MAX_LEVEL:
        raise ResourceError(
            f"mesh level {level} exceeds the supported maximum {MAX_LEVEL}")
    n = 2 ** int(level)

    xs = np.linspace(0.0, 1.0, n + 1)
    xv, yv = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.column_stack([xv.ravel(), yv.ravel()])

    def vid(i, j):
        return j * (n + 1) + i

    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    c = 0
    for j in range(n):
        for i in range(n):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            cells[c] = (v00, v10, v11)      # lower triangle
            cells[c + 1] = (v00, v11, v01)  # upper triangle
            c += 2

    # Faces in first-encounter order over (cell, local edge).
    face_index = {}
    faces = []
    cell_faces = np.empty((len(cells), 3), dtype=np.int64)
    cell_face_signs = np.empty((len(cells), 3), dtype=np.int64)
    face_cells = []
    for ci, cell in enumerate(cells):
        for m in range(3):
            a, b = int(cell[m]), int(cell[(m + 1) % 3])
            key = (min(a, b), max(a, b))
            fi = face_index.get(key)
            if fi is None:
                fi = len(faces)
                face_index[key] = fi
                faces.append(key)
                face_cells.append([ci, -1])
            else:
                face_cells[fi][1] = ci
            cell_faces[ci, m] = fi
            # Stored tangent runs from the lower to the higher vertex id;
            # the cell's outward normal agrees iff its CCW edge does too.
            cell_face_signs[ci, m] = 1 if a == key[0] else -1

    faces = np.asarray(faces, dtype=np.int64)
    face_cells = np.asarray(face_cells, dtype=np.int64)
    boundary = face_cells[:, 1] < 0

    p0 = vertices[faces[:, 0]]
    p1 = vertices[faces[:, 1]]
    tangents = p1 - p0
    face_lengths = np.sqrt((tangents ** 2).sum(axis=1))
    tu = tangents / face_lengths[:, None]
    # Outward normal of a CCW edge A->B is (B-A) rotated by -90 degrees.
    face_normals = np.column_stack([tu[:, 1], -tu[:, 0]])
    face_midpoints = 0.5 * (p0 + p1)

    v = vertices[cells]
    cell_areas = 0.5 * np.abs(
        (v[:, 1, 0] - v[:, 0, 0]) * (v[:, 2, 1] - v[:, 0, 1])
        - (v[:, 2, 0] - v[:, 0, 0]) * (v[:, 1, 1] - v[:, 0, 1]))

    arrays = dict(
        vertices=vertices, cells=cells, faces=faces,
        face_normals=face_normals, face_lengths=face_lengths,
        face_midpoints=face_midpoints, cell_faces=cell_faces,
        cell_face_signs=cell_face_signs, boundary=boundary,
        cell_areas=cell_areas, face_cells=face_cells)
    for a in arrays.values():
        a.setflags(write=False)
    return Mesh(level=int(level), **arrays)


def face_geometry(mesh, face):
    """Length, canonical unit normal and midpoint of one face."""
    if face < 0 or face >= mesh.num_faces:
        raise IndexError(f"face id {face} out of range [0, {mesh.num_faces})")
    return (float(mesh.face_lengths[face]),
            mesh.face_normals[face].copy(),
            mesh.face_midpoints[face].copy())


def write_mesh_text(mesh, path):
    """Plain-text mesh dump, one record per line.

    Format: ``v <id> <x> <y>``, ``c <id> <v0> <v1> <v2>``,
    ``f <id> <v0> <v1> <boundary 0|1>``.
    """
    with open(path, "w") as fh:
        fh.write(f"# structured mesh level {mesh.level}\n")
        for i, (x, y) in enumerate(mesh.vertices):
            fh.write(f"v {i} {x!r} {y!r}\n")
        for i, cell in enumerate(mesh.cells):
            fh.write(f"c {i} {cell[0]} {cell[1]} {cell[2]}\n")
        for i, (a, b) in enumerate(mesh.faces):
            fh.write(f"f {i} {a} {b} {int(mesh.boundary[i])}\n")
