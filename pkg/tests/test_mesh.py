import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinsym.mesh import (
    ShapeSpec,
    mesh_from_triangles,
    mesh_measures,
    read_mesh,
    refine_uniform,
    triangle_angles,
    triangulate,
    validate_mesh,
    write_mesh,
)

from _cases import L_SHAPE


def polygon_disk_area(n, r=1.0):
    return 0.5 * n * r * r * math.sin(2 * math.pi / n)


def test_unit_square_coarse():
    m = triangulate(ShapeSpec.rectangle(1, 1, 0.5))
    assert m.n_triangles == 8
    meas = mesh_measures(m)
    assert meas["area"] == pytest.approx(1.0, abs=1e-15)
    assert meas["boundary_length"] == pytest.approx(4.0, abs=1e-15)
    assert meas["boundary_length_per_marker"] == {1: 1.0, 2: 1.0, 3: 1.0, 4: 1.0}
    assert validate_mesh(m).ok


def test_refinement_counts_and_size():
    m = triangulate(ShapeSpec.rectangle(1, 1, 0.5))
    r = refine_uniform(m)
    assert r.n_triangles == 4 * m.n_triangles
    assert r.n_vertices == 25
    assert r.max_edge_length() == pytest.approx(m.max_edge_length() / 2)
    assert mesh_measures(r)["boundary_length_per_marker"] == mesh_measures(m)["boundary_length_per_marker"]
    assert validate_mesh(r).ok


def test_rectangle_right_triangles_not_obtuse():
    m = triangulate(ShapeSpec.rectangle(2.0, 1.0, 0.1))
    assert validate_mesh(m).obtuse_triangles == 0
    assert mesh_measures(m)["area"] == pytest.approx(2.0)


@pytest.mark.parametrize("segments,h", [(32, 0.125), (64, 0.1), (48, 0.2)])
def test_disk_area_and_angles(segments, h):
    m = triangulate(ShapeSpec.disk(1.0, segments, h))
    d = validate_mesh(m)
    assert d.ok and d.obtuse_triangles == 0
    assert mesh_measures(m)["area"] == pytest.approx(polygon_disk_area(segments), rel=1e-13)


def test_disk_refinement_snaps_to_circle():
    m = triangulate(ShapeSpec.disk(1.0, 32, 0.125, center=(0.3, -0.2)))
    for _ in range(2):
        m = refine_uniform(m)
        bv = m.vertices[m.boundary_vertices()] - (0.3, -0.2)
        assert np.allclose(np.hypot(*bv.T), 1.0, atol=1e-14)
        assert validate_mesh(m).obtuse_triangles == 0
    n_seg = len(m.boundary_edges)
    assert mesh_measures(m)["area"] == pytest.approx(polygon_disk_area(n_seg), rel=1e-12)


def test_disk_segment_constraint():
    with pytest.raises(ValueError):
        triangulate(ShapeSpec.disk(1.0, 31, 0.125))


def test_l_shape():
    m = triangulate(ShapeSpec.polygon(L_SHAPE, 1 / 8))
    meas = mesh_measures(m)
    assert meas["area"] == pytest.approx(0.75, abs=1e-14)
    assert sorted(meas["boundary_length_per_marker"]) == [1, 2, 3, 4, 5, 6]
    assert meas["boundary_length_per_marker"][1] == pytest.approx(1.0)
    assert meas["boundary_length_per_marker"][3] == pytest.approx(0.5)
    assert validate_mesh(m).ok


def test_general_polygon_delaunay():
    m = triangulate(ShapeSpec.polygon([(0, 0), (1, 0), (0.3, 0.8)], 0.1))
    assert validate_mesh(m).ok
    assert mesh_measures(m)["area"] == pytest.approx(0.4, rel=1e-12)


def test_custom_markers():
    m = triangulate(ShapeSpec.rectangle(1, 1, 0.25, markers={"left": 7, "top": 7}))
    assert set(m.markers()) == {1, 2, 7}
    assert mesh_measures(m)["boundary_length_per_marker"][7] == pytest.approx(2.0)
    with pytest.raises(ValueError):
        triangulate(ShapeSpec.rectangle(1, 1, 0.25, markers={"left": 0}))
    with pytest.raises(ValueError):
        triangulate(ShapeSpec.rectangle(1, 1, 0.25, markers={"west": 3}))


def test_invalid_shapes():
    with pytest.raises(ValueError):
        triangulate(ShapeSpec.polygon([(0, 0), (1, 0), (2, 0)], 0.1))
    with pytest.raises(ValueError):
        triangulate(ShapeSpec.rectangle(1, 1, 5.0))


def test_normals_point_outward():
    m = triangulate(ShapeSpec.polygon(L_SHAPE, 1 / 8))
    n = m.outward_normals()
    assert np.allclose(np.linalg.norm(n, axis=1), 1.0)
    bottom = m.edge_markers == 1
    assert np.allclose(n[bottom], [0, -1])


def test_clockwise_input_is_reoriented():
    v = np.array([[0, 0], [1, 0], [0, 1]], float)
    m = mesh_from_triangles(v, np.array([[0, 2, 1]]))
    assert m.signed_areas()[0] > 0
    assert validate_mesh(m).ok


def test_angles_sum_to_180():
    m = triangulate(ShapeSpec.disk(1.0, 32, 0.25))
    assert np.allclose(triangle_angles(m).sum(axis=1), 180.0)


def test_roundtrip(tmp_path):
    m = refine_uniform(triangulate(ShapeSpec.polygon(L_SHAPE, 0.25)))
    write_mesh(m, tmp_path / "m.txt")
    r = read_mesh(tmp_path / "m.txt")
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.triangles, m.triangles)
    assert np.array_equal(r.boundary_edges, m.boundary_edges)
    assert np.array_equal(r.edge_markers, m.edge_markers)


def test_arrays_are_read_only():
    m = triangulate(ShapeSpec.rectangle(1, 1, 0.5))
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0


@settings(max_examples=25, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(0.3, 3.0), st.floats(0.05, 0.3))
def test_rectangle_measures(w, h, hs):
    hs = min(hs, w, h)
    m = triangulate(ShapeSpec.rectangle(w, h, hs))
    meas = mesh_measures(m)
    assert meas["area"] == pytest.approx(w * h, rel=1e-12)
    assert meas["boundary_length"] == pytest.approx(2 * (w + h), rel=1e-12)
    assert m.max_edge_length() <= hs * math.sqrt(2) * (1 + 1e-12)
