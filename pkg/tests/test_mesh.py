import numpy as np
import pytest

from hdgch.errors import ResourceError
from hdgch.mesh import build_structured_mesh, face_geometry, write_mesh_text

from conftest import mesh_of


def test_level0_counts():
    m = mesh_of(0)
    assert m.num_cells == 2
    assert m.num_faces == 5
    assert int(m.boundary.sum()) == 4


def test_level3_matches_table_mesh_column():
    m = mesh_of(3)
    assert m.num_cells == 128
    assert m.h / np.sqrt(2.0) == pytest.approx(2.0 ** -3, abs=1e-15)


def test_areas_partition_unit_square():
    m = mesh_of(2)
    assert abs(m.cell_areas.sum() - 1.0) < 1e-14
    assert (m.cell_areas > 0).all()


def test_face_lengths_level3():
    m = mesh_of(3)
    lengths = set(np.round(m.face_lengths, 13))
    assert lengths == {round(2.0 ** -3, 13), round(2.0 ** -3 * np.sqrt(2), 13)}


def test_face_geometry_values():
    m = mesh_of(1)
    horiz = [f for f in range(m.num_faces)
             if m.boundary[f] and abs(m.face_normals[f, 1]) == 1.0]
    ln, normal, mid = face_geometry(m, horiz[0])
    assert ln == pytest.approx(0.5, abs=1e-15)
    assert abs(normal[0]) < 1e-15 and abs(abs(normal[1]) - 1.0) < 1e-14

    m0 = mesh_of(0)
    diag = [f for f in range(m0.num_faces) if not m0.boundary[f]]
    ln, _, _ = face_geometry(m0, diag[0])
    assert ln == pytest.approx(np.sqrt(2.0), abs=1e-14)


def test_normals_are_unit():
    m = mesh_of(3)
    norms = np.sqrt((m.face_normals ** 2).sum(axis=1))
    assert np.abs(norms - 1.0).max() < 1e-14


def test_divergence_theorem_on_constants():
    # closed polygon: outward normals weighted by edge lengths sum to zero
    m = mesh_of(2)
    for c in range(m.num_cells):
        total = np.zeros(2)
        for lf in range(3):
            f = m.cell_faces[c, lf]
            total += (m.cell_face_signs[c, lf] * m.face_lengths[f]
                      * m.face_normals[f])
        assert np.abs(total).max() < 1e-14


def test_interior_faces_have_two_cells_and_opposite_signs():
    m = mesh_of(3)
    seen = {}
    for c in range(m.num_cells):
        for lf in range(3):
            seen.setdefault(int(m.cell_faces[c, lf]), []).append(
                int(m.cell_face_signs[c, lf]))
    for f, signs in seen.items():
        if m.boundary[f]:
            assert len(signs) == 1
        else:
            assert len(signs) == 2
            assert signs[0] == -signs[1]


def test_refinement_halves_lengths_quarters_areas():
    m1, m2 = mesh_of(2), mesh_of(3)
    assert sorted(set(np.round(m2.face_lengths * 2, 14))) == \
        sorted(set(np.round(m1.face_lengths, 14)))
    assert m2.cell_areas.max() * 4 == pytest.approx(m1.cell_areas.max(),
                                                    abs=1e-16)
    assert m2.num_cells == 4 * m1.num_cells


def test_level_cap():
    with pytest.raises(ResourceError):
        build_structured_mesh(13)
    with pytest.raises(ValueError):
        build_structured_mesh(-1)


def test_bad_face_id():
    m = mesh_of(1)
    with pytest.raises(IndexError):
        face_geometry(m, m.num_faces)
    with pytest.raises(IndexError):
        face_geometry(m, -1)


def test_mesh_immutable():
    m = mesh_of(1)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


def test_text_dump(tmp_path):
    m = mesh_of(1)
    path = tmp_path / "mesh.txt"
    write_mesh_text(m, path)
    lines = path.read_text().splitlines()
    assert sum(1 for ln in lines if ln.startswith("v ")) == len(m.vertices)
    assert sum(1 for ln in lines if ln.startswith("c ")) == m.num_cells
    assert sum(1 for ln in lines if ln.startswith("f ")) == m.num_faces
