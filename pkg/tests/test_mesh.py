from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorfem.basis import gauss_legendre
from tensorfem.mesh import (
    InvertedElementError,
    MeshError,
    MeshFormatError,
    curve_mesh,
    load_native,
    make_cartesian,
    print_vtk,
    save_native,
    transformation,
)

from conftest import random_forest, wavy

DATA = Path(__file__).parent / "data"


def _area(mesh, nq):
    r = gauss_legendre(nq)
    _, J = mesh.map_lattice(r.points, jacobian=True)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    return float(np.einsum("a,b,eab->", r.weights, r.weights, det))


def test_cartesian_counts():
    m = make_cartesian(1, 1)
    assert (m.n_vertices, m.n_elements, len(m.boundary)) == (4, 1, 4)
    m = make_cartesian(2, 2)
    assert (m.n_vertices, m.n_elements, len(m.boundary)) == (9, 4, 8)


def test_cartesian_unit_elements_have_unit_det():
    m = make_cartesian(3, 1, 3.0, 1.0)
    _, J = m.map_lattice(gauss_legendre(3).points, jacobian=True)
    assert np.allclose(J, np.eye(2))


@pytest.mark.parametrize("args", [(0, 1), (1, -2), (1, 1, 0.0, 1.0), (2, 2, 1.0, -1.0)])
def test_cartesian_rejects_bad_sizes(args):
    with pytest.raises(ValueError):
        make_cartesian(*args)


def test_validation_errors():
    v = [[0, 0], [1, 0], [1, 1], [0, 1]]
    from tensorfem.mesh import Mesh

    with pytest.raises(MeshError):
        Mesh(v, [[0, 1, 2, 7]], [1], [], [])
    with pytest.raises(InvertedElementError):
        Mesh(v, [[0, 3, 2, 1]], [1], [], [])
    with pytest.raises(MeshError):
        Mesh(v, [[0, 1, 2, 3]], [1], [[0, 2]], [1])


def test_round_trip_simple_and_curved(curved_mesh):
    for m in (make_cartesian(1, 1), make_cartesian(3, 2, 2.0, 1.5), curved_mesh):
        assert load_native(save_native(m)) == m


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000), steps=st.integers(0, 12))
def test_round_trip_refined_meshes(seed, steps):
    m = random_forest(seed, steps).leaf_mesh()
    assert load_native(save_native(m)) == m


def test_bad_vertex_index_names_line():
    text = save_native(make_cartesian(1, 1)).replace("1 quad 0 1 3 2", "1 quad 0 1 99 2")
    with pytest.raises(MeshFormatError, match=r"line 9:.*99"):
        load_native(text)


def test_non_quad_element_and_syntax_errors():
    base = save_native(make_cartesian(1, 1))
    with pytest.raises(MeshFormatError, match="line 9"):
        load_native(base.replace("1 quad", "1 tri"))
    with pytest.raises(MeshFormatError, match="line 4"):
        load_native(base.replace("0 0\n", "0 zero\n", 1))
    with pytest.raises(MeshFormatError, match="line 1"):
        load_native("mesh v0\n")
    with pytest.raises(MeshFormatError, match="line 15"):
        load_native(base + "extra stuff\n")
    with pytest.raises(MeshFormatError, match="trailing"):
        load_native(save_native(curve_mesh(make_cartesian(1, 1), 1, wavy)) + "1 2\n")


def test_order2_fixture_file():
    m = load_native((DATA / "bump_order2.mesh").read_text())
    assert m.nodes is not None and m.nodes.order == 2
    assert m.n_elements == 2 and set(m.boundary_attributes.tolist()) == {1, 2, 3, 4}
    # the shared edge nodes are stored once
    assert len(m.nodes.coords) == 15
    # top boundary is the parabola through y = 1, 1.1, 1: area = 2 + 2 * (2/3) * 0.1
    assert abs(_area(m, 4) - (2 + 2 * 2 / 3 * 0.1)) < 1e-12
    t = transformation(m, 0)
    assert np.allclose(t.point([[0.5, 1.0]]), [[0.5, 1.1]])
    assert load_native(save_native(m)) == m


def test_curve_identity_order3_has_unit_det():
    m = curve_mesh(make_cartesian(2, 2), 3, lambda x, y: (x, y))
    _, J = m.map_lattice(gauss_legendre(5).points, jacobian=True)
    assert np.allclose(np.linalg.det(J), 0.25, atol=1e-13)


def test_curve_sine_map_valid():
    m = curve_mesh(make_cartesian(4, 4), 2, lambda x, y: (x + 0.1 * np.sin(np.pi * y), y))
    _, J = m.map_lattice(gauss_legendre(6).points, jacobian=True)
    assert np.all(np.linalg.det(J) > 0)


def test_collapsing_map_is_inverted():
    with pytest.raises(InvertedElementError):
        curve_mesh(make_cartesian(2, 2), 2, lambda x, y: (0 * x, y))


def test_shared_nodes_agree(curved_mesh):
    X = curved_mesh.map_lattice(np.array([0.0, 0.3, 1.0]))
    edges = curved_mesh.edges
    for elems in edges.edge_elements:
        if len(elems) != 2:
            continue
        (e0, k0), (e1, k1) = elems

        def side(e, k):
            pts = {0: X[e, 0, :], 1: X[e, :, -1], 2: X[e, -1, ::-1], 3: X[e, ::-1, 0]}[k]
            return pts

        assert np.allclose(side(e0, k0), side(e1, k1)[::-1], atol=1e-14)


def test_transformation_examples():
    t = transformation(make_cartesian(1, 1), 0)
    assert np.allclose(t.point([[0.5, 0.5]]), [[0.5, 0.5]])
    assert np.allclose(t.jacobian([[0.5, 0.5]]), np.eye(2))
    t = transformation(make_cartesian(1, 1, 2.0, 1.0), 0)
    assert np.allclose(t.det(np.random.default_rng(0).random((5, 2))), 2.0)
    with pytest.raises(IndexError):
        transformation(make_cartesian(1, 1), 3)


def test_curved_jacobian_matches_finite_differences(curved_mesh):
    t = transformation(curved_mesh, 4)
    pts = np.array([[0.2, 0.3], [0.7, 0.9], [0.5, 0.5]])
    h = 1e-6
    J = t.jacobian(pts)
    for j, dv in enumerate(np.eye(2)):
        fd = (t.point(pts + h * dv) - t.point(pts - h * dv)) / (2 * h)
        assert np.allclose(J[:, :, j], fd, atol=1e-6)


def test_area_cartesian_and_curved():
    assert abs(_area(make_cartesian(5, 3, 2.0, 1.5), 3) - 3.0) < 1e-12
    # opposite sides are shifted by the same amount, so the enclosed area stays 1
    m = curve_mesh(make_cartesian(6, 6), 4, wavy)
    assert abs(_area(m, 6) - 1.0) < 1e-10


def test_interior_edges_shared_with_opposite_orientation():
    m = make_cartesian(3, 3)
    edges = m.edges
    n_interior = 0
    for elems in edges.edge_elements:
        assert len(elems) in (1, 2)
        if len(elems) == 2:
            n_interior += 1
            (e0, k0), (e1, k1) = elems
            assert edges.element_flip[e0, k0] != edges.element_flip[e1, k1]
    assert n_interior == 12


def test_vtk_counts():
    text = print_vtk(make_cartesian(1, 1))
    assert "POINTS 4 double" in text and "CELLS 1 5" in text
    assert text.split("CELL_TYPES 1\n")[1].startswith("9\n")
    text = print_vtk(make_cartesian(1, 1), subdivisions=2)
    assert "POINTS 9 double" in text and "CELL_TYPES 4" in text
    with pytest.raises(ValueError):
        print_vtk(make_cartesian(1, 1), subdivisions=0)


def test_vtk_points_lie_on_the_map(curved_mesh):
    text = print_vtk(curved_mesh, subdivisions=8)
    body = text.split("double\n", 1)[1].split("CELLS")[0]
    pts = np.array([list(map(float, line.split())) for line in body.strip().splitlines()])
    X = curved_mesh.map_lattice(np.linspace(0, 1, 9)).reshape(-1, 2)
    assert np.abs(pts[:, :2] - X).max() <= 1e-14


def test_vtk_fields_written():
    class Ones:
        def evaluate_lattice(self, pts):
            return np.ones((1, len(pts), len(pts)))

    text = print_vtk(make_cartesian(1, 1), {"u": Ones()}, subdivisions=2)
    assert "POINT_DATA 9" in text and "SCALARS u double 1" in text
