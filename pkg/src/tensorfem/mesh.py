"""Conforming quadrilateral meshes with their element maps and a text file format."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .basis import Basis1D, NodeKind, default_quadrature
from .topology import build_edges, h1_numbering

FORMAT_HEADER = "tensorfem-mesh v1"
VTK_QUAD = 9


class MeshError(ValueError):
    """Structurally invalid mesh data."""


class MeshFormatError(MeshError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvertedElementError(MeshError):
    """An element transformation with non-positive Jacobian determinant."""

    def __init__(self, element: int, detj: float):
        super().__init__(f"element {element} is inverted or degenerate (det J = {detj:.3e})")
        self.element = element
        self.detj = detj


@dataclass(eq=False)
class NodalField:
    """High-order geometry: an H1-type vector field of order ``order``.

    ``coords`` holds one (x, y) pair per deduplicated node; ``dof_table`` maps
    each element to its ``(order+1)**2`` nodes in lexicographic order.
    """

    order: int
    kind: NodeKind
    coords: np.ndarray
    dof_table: np.ndarray

    @classmethod
    def from_element_coords(cls, elements, n_vertices, order, kind, elem_coords) -> "NodalField":
        """Deduplicate per-element lattices of shape ``(ne, order+1, order+1, 2)``."""
        numbering = h1_numbering(elements, n_vertices, order)
        elem_coords = np.asarray(elem_coords, dtype=float)
        coords = np.zeros((numbering.n_dofs, 2))
        coords[numbering.lex.ravel()] = elem_coords.reshape(-1, 2)
        return cls(order, NodeKind(kind), coords, numbering.lex)

    @property
    def basis(self) -> Basis1D:
        return Basis1D(self.order, self.kind)

    def element_coords(self) -> np.ndarray:
        n = self.order + 1
        return self.coords[self.dof_table].reshape(-1, n, n, 2)


@dataclass(eq=False)
class Mesh:
    vertices: np.ndarray
    elements: np.ndarray
    element_attributes: np.ndarray
    boundary: np.ndarray
    boundary_attributes: np.ndarray
    nodes: NodalField | None = None
    _edges: object = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        self.elements = np.asarray(self.elements, dtype=np.int64).reshape(-1, 4)
        self.element_attributes = np.asarray(self.element_attributes, dtype=np.int64).reshape(-1)
        self.boundary = np.asarray(self.boundary, dtype=np.int64).reshape(-1, 2)
        self.boundary_attributes = np.asarray(self.boundary_attributes, dtype=np.int64).reshape(-1)
        self._validate()

    def _validate(self) -> None:
        nv = len(self.vertices)
        if len(self.element_attributes) != len(self.elements):
            raise MeshError("one attribute per element required")
        if len(self.boundary_attributes) != len(self.boundary):
            raise MeshError("one attribute per boundary segment required")
        for name, ids in (("element", self.elements), ("boundary", self.boundary)):
            if ids.size and (ids.min() < 0 or ids.max() >= nv):
                raise MeshError(f"{name} references a vertex outside 0..{nv - 1}")
        if np.any(self.element_attributes < 1) or np.any(self.boundary_attributes < 1):
            raise MeshError("attributes must be positive integers")
        edges = self.edges
        lookup = edges.index()
        for a, b in self.boundary.tolist():
            idx = lookup.get((min(a, b), max(a, b)))
            if idx is None or len(edges.edge_elements[idx]) != 1:
                raise MeshError(f"boundary segment ({a}, {b}) is not an edge of exactly one element")
        if len(self.elements):
            _, J = self.map_lattice(np.array([0.5]), jacobian=True)
            det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
            bad = np.flatnonzero(det.reshape(len(self.elements)) <= 0)
            if len(bad):
                raise InvertedElementError(int(bad[0]), float(det.ravel()[bad[0]]))

    @property
    def edges(self):
        if self._edges is None:
            self._edges = build_edges(self.elements)
        return self._edges

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def geometry_basis(self) -> Basis1D:
        return self.nodes.basis if self.nodes is not None else Basis1D(1)

    def element_coords(self) -> np.ndarray:
        """Geometry control points, shape ``(ne, m+1, m+1, 2)``, lexicographic."""
        if self.nodes is not None:
            return self.nodes.element_coords()
        v = self.vertices[self.elements]
        return np.stack([v[:, [0, 1]], v[:, [3, 2]]], axis=1)

    def map_lattice(self, points, jacobian: bool = False, elements=None):
        """Physical points (and Jacobians) on the tensor lattice ``points x points``.

        Returns ``X`` of shape ``(ne, nq, nq, 2)`` indexed ``[e, qy, qx]`` and,
        if requested, ``J`` of shape ``(ne, nq, nq, 2, 2)`` with
        ``J[..., i, j] = d x_i / d xhat_j``.
        """
        points = np.asarray(points, dtype=float)
        basis = self.geometry_basis
        B = basis.eval(points)
        C = self.element_coords()
        if elements is not None:
            C = C[elements]
        X = np.einsum("ai,bj,eijc->eabc", B, B, C, optimize=True)
        if not jacobian:
            return X
        G = basis.deriv(points)
        dx = np.einsum("ai,bj,eijc->eabc", B, G, C, optimize=True)
        dy = np.einsum("ai,bj,eijc->eabc", G, B, C, optimize=True)
        return X, np.stack([dx, dy], axis=-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        same = (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.elements, other.elements)
            and np.array_equal(self.element_attributes, other.element_attributes)
            and np.array_equal(self.boundary, other.boundary)
            and np.array_equal(self.boundary_attributes, other.boundary_attributes)
        )
        if not same or (self.nodes is None) != (other.nodes is None):
            return False
        if self.nodes is None:
            return True
        a, b = self.nodes, other.nodes
        return (
            a.order == b.order
            and a.kind == b.kind
            and np.array_equal(a.element_coords(), b.element_coords())
        )

    __hash__ = None


class ElementTransformation:
    """Reference-to-physical map of one element."""

    def __init__(self, mesh: Mesh, element: int):
        if not 0 <= element < mesh.n_elements:
            raise IndexError(f"element id {element} out of range 0..{mesh.n_elements - 1}")
        self.element = element
        self._basis = mesh.geometry_basis
        self._coords = mesh.element_coords()[element]

    def _tables(self, ref):
        ref = np.atleast_2d(np.asarray(ref, dtype=float))
        return ref, self._basis.eval(ref[:, 0]), self._basis.eval(ref[:, 1])

    def point(self, ref) -> np.ndarray:
        _, bx, by = self._tables(ref)
        return np.einsum("qi,qj,ijc->qc", by, bx, self._coords)

    def jacobian(self, ref) -> np.ndarray:
        ref, bx, by = self._tables(ref)
        gx = self._basis.deriv(ref[:, 0])
        gy = self._basis.deriv(ref[:, 1])
        dx = np.einsum("qi,qj,ijc->qc", by, gx, self._coords)
        dy = np.einsum("qi,qj,ijc->qc", gy, bx, self._coords)
        return np.stack([dx, dy], axis=-1)

    def det(self, ref) -> np.ndarray:
        J = self.jacobian(ref)
        return J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]

    # square Jacobian: the integration weight is det J
    weight = det


def transformation(mesh: Mesh, element: int) -> ElementTransformation:
    return ElementTransformation(mesh, element)


def make_cartesian(nx: int, ny: int, width: float = 1.0, height: float = 1.0) -> Mesh:
    """Uniform ``nx x ny`` quad mesh of ``[0, width] x [0, height]``."""
    if nx < 1 or ny < 1:
        raise ValueError(f"need nx, ny >= 1, got {nx}, {ny}")
    if not (width > 0 and height > 0):
        raise ValueError(f"need positive width and height, got {width}, {height}")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    vid = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    elements = np.column_stack(
        [vid[:-1, :-1].ravel(), vid[:-1, 1:].ravel(), vid[1:, 1:].ravel(), vid[1:, :-1].ravel()]
    )
    bottom = [(vid[0, i], vid[0, i + 1]) for i in range(nx)]
    right = [(vid[j, nx], vid[j + 1, nx]) for j in range(ny)]
    top = [(vid[ny, i + 1], vid[ny, i]) for i in reversed(range(nx))]
    left = [(vid[j + 1, 0], vid[j, 0]) for j in reversed(range(ny))]
    boundary = np.array(bottom + right + top + left)
    return Mesh(
        vertices,
        elements,
        np.ones(len(elements), dtype=np.int64),
        boundary,
        np.ones(len(boundary), dtype=np.int64),
    )


def check_jacobians(mesh: Mesh, order: int | None = None) -> None:
    """Raise :class:`InvertedElementError` unless det J > 0 at every quadrature point."""
    if order is None:
        order = mesh.geometry_basis.order
    pts = default_quadrature(order).points
    _, J = mesh.map_lattice(pts, jacobian=True)
    det = (J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]).reshape(mesh.n_elements, -1)
    bad = np.argwhere(det <= 0)
    if len(bad):
        e, q = bad[0]
        raise InvertedElementError(int(e), float(det[e, q]))


def curve_mesh(
    mesh: Mesh,
    order: int,
    mapping: Callable[[np.ndarray, np.ndarray], tuple],
    kind: NodeKind = NodeKind.GAUSS_LOBATTO,
) -> Mesh:
    """Attach order-``order`` nodes obtained by pushing the node lattice through ``mapping``."""
    if order < 1:
        raise ValueError(f"geometry order must be >= 1, got {order}")
    basis = Basis1D(order, kind)
    X = mesh.map_lattice(basis.nodes)
    mx, my = mapping(X[..., 0], X[..., 1])
    elem_coords = np.stack(np.broadcast_arrays(mx, my), axis=-1)
    nodes = NodalField.from_element_coords(mesh.elements, mesh.n_vertices, order, kind, elem_coords)
    vertices = nodes.coords[: mesh.n_vertices].copy()
    # vertex DOFs come first in the H1 numbering, so vertices follow the map
    out = _with_nodes(mesh, vertices, nodes)
    check_jacobians(out)
    return out


def _with_nodes(mesh: Mesh, vertices, nodes) -> Mesh:
    out = Mesh.__new__(Mesh)
    out.vertices = np.asarray(vertices, dtype=float)
    out.elements = mesh.elements.copy()
    out.element_attributes = mesh.element_attributes.copy()
    out.boundary = mesh.boundary.copy()
    out.boundary_attributes = mesh.boundary_attributes.copy()
    out.nodes = nodes
    out._edges = mesh._edges
    return out


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def save_native(mesh: Mesh) -> str:
    out = io.StringIO()
    out.write(f"{FORMAT_HEADER}\ndimension 2\n")
    out.write(f"vertices {mesh.n_vertices}\n")
    for x, y in mesh.vertices.tolist():
        out.write(f"{_fmt(x)} {_fmt(y)}\n")
    out.write(f"elements {mesh.n_elements}\n")
    for attr, quad in zip(mesh.element_attributes.tolist(), mesh.elements.tolist()):
        out.write(f"{attr} quad {quad[0]} {quad[1]} {quad[2]} {quad[3]}\n")
    out.write(f"boundary {len(mesh.boundary)}\n")
    for attr, seg in zip(mesh.boundary_attributes.tolist(), mesh.boundary.tolist()):
        out.write(f"{attr} segment {seg[0]} {seg[1]}\n")
    if mesh.nodes is not None:
        out.write(f"nodes order {mesh.nodes.order} kind {mesh.nodes.kind.value}\n")
        for x, y in mesh.nodes.element_coords().reshape(-1, 2).tolist():
            out.write(f"{_fmt(x)} {_fmt(y)}\n")
    return out.getvalue()


class _Lines:
    def __init__(self, text: str):
        self._lines = [
            (i + 1, line.split())
            for i, line in enumerate(text.splitlines())
            if line.strip() and not line.lstrip().startswith("#")
        ]
        self._pos = 0
        self.last = 0

    def next(self, what: str) -> tuple[int, list[str]]:
        if self._pos >= len(self._lines):
            raise MeshFormatError(self.last + 1, f"unexpected end of input, expected {what}")
        lineno, toks = self._lines[self._pos]
        self._pos += 1
        self.last = lineno
        return lineno, toks

    def done(self) -> bool:
        return self._pos >= len(self._lines)


def _numbers(lineno, toks, conv, count, what):
    if len(toks) != count:
        raise MeshFormatError(lineno, f"expected {count} fields for {what}, got {len(toks)}")
    try:
        return [conv(t) for t in toks]
    except ValueError:
        raise MeshFormatError(lineno, f"malformed number in {what}: {' '.join(toks)}") from None


def _section(lines: _Lines, keyword: str) -> int:
    lineno, toks = lines.next(f"'{keyword} <count>'")
    if len(toks) != 2 or toks[0] != keyword:
        raise MeshFormatError(lineno, f"expected '{keyword} <count>', got '{' '.join(toks)}'")
    try:
        count = int(toks[1])
    except ValueError:
        raise MeshFormatError(lineno, f"bad {keyword} count '{toks[1]}'") from None
    if count < 0:
        raise MeshFormatError(lineno, f"negative {keyword} count")
    return count


def load_native(text: str) -> Mesh:
    lines = _Lines(text)
    lineno, toks = lines.next("header")
    if " ".join(toks) != FORMAT_HEADER:
        raise MeshFormatError(lineno, f"expected header '{FORMAT_HEADER}'")
    lineno, toks = lines.next("dimension")
    if toks != ["dimension", "2"]:
        raise MeshFormatError(lineno, "only 'dimension 2' is supported")

    nv = _section(lines, "vertices")
    vertices = [_numbers(*lines.next("vertex"), float, 2, "vertex") for _ in range(nv)]

    ne = _section(lines, "elements")
    elements, eattr = [], []
    for _ in range(ne):
        lineno, toks = lines.next("element")
        if len(toks) >= 2 and toks[1] != "quad":
            raise MeshFormatError(lineno, f"unsupported element type '{toks[1]}' (only quad)")
        vals = _numbers(lineno, toks[:1] + toks[2:], int, 5, "element")
        _check_ids(lineno, vals[1:], nv)
        eattr.append(vals[0])
        elements.append(vals[1:])

    nb = _section(lines, "boundary")
    boundary, battr = [], []
    for _ in range(nb):
        lineno, toks = lines.next("boundary segment")
        if len(toks) >= 2 and toks[1] != "segment":
            raise MeshFormatError(lineno, f"unsupported boundary type '{toks[1]}' (only segment)")
        vals = _numbers(lineno, toks[:1] + toks[2:], int, 3, "boundary segment")
        _check_ids(lineno, vals[1:], nv)
        battr.append(vals[0])
        boundary.append(vals[1:])

    nodes = None
    if not lines.done():
        lineno, toks = lines.next("nodes")
        if len(toks) != 5 or toks[0] != "nodes" or toks[1] != "order" or toks[3] != "kind":
            raise MeshFormatError(lineno, "expected 'nodes order <m> kind <kind>'")
        try:
            order = int(toks[2])
            kind = NodeKind(toks[4])
        except ValueError:
            raise MeshFormatError(lineno, "bad nodes order or kind") from None
        if order < 1:
            raise MeshFormatError(lineno, "nodes order must be >= 1")
        count = ne * (order + 1) ** 2
        pts = [_numbers(*lines.next("node"), float, 2, "node") for _ in range(count)]
        elem_coords = np.array(pts, dtype=float).reshape(ne, order + 1, order + 1, 2)
        nodes = NodalField.from_element_coords(elements, nv, order, kind, elem_coords)
    if not lines.done():
        lineno, _ = lines.next("end")
        raise MeshFormatError(lineno, "trailing content after mesh data")
    return Mesh(vertices, elements, eattr, boundary, battr, nodes)


def _check_ids(lineno: int, ids, nv: int) -> None:
    for v in ids:
        if not 0 <= v < nv:
            raise MeshFormatError(lineno, f"vertex index {v} out of range (mesh has {nv} vertices)")


def print_vtk(mesh: Mesh, fields: Mapping[str, object] | None = None, subdivisions: int = 1) -> str:
    """Legacy VTK text sampling every element on an ``(s+1) x (s+1)`` reference lattice.

    ``fields`` maps names to objects with an ``evaluate_lattice(points)``
    method returning ``(ne, s+1, s+1)`` values (e.g. a GridFunction).
    """
    s = int(subdivisions)
    if s < 1:
        raise ValueError(f"subdivisions must be >= 1, got {subdivisions}")
    lattice = np.linspace(0.0, 1.0, s + 1)
    X = mesh.map_lattice(lattice)
    ne = mesh.n_elements
    npe = (s + 1) ** 2
    out = io.StringIO()
    out.write("# vtk DataFile Version 2.0\ntensorfem mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {ne * npe} double\n")
    for x, y in X.reshape(-1, 2).tolist():
        out.write(f"{_fmt(x)} {_fmt(y)} 0\n")
    local = np.arange(npe).reshape(s + 1, s + 1)
    cells = np.column_stack(
        [local[:-1, :-1].ravel(), local[:-1, 1:].ravel(), local[1:, 1:].ravel(), local[1:, :-1].ravel()]
    )
    ncells = ne * s * s
    out.write(f"CELLS {ncells} {5 * ncells}\n")
    for e in range(ne):
        for c in (cells + e * npe).tolist():
            out.write(f"4 {c[0]} {c[1]} {c[2]} {c[3]}\n")
    out.write(f"CELL_TYPES {ncells}\n")
    out.write(f"{VTK_QUAD}\n" * ncells)
    out.write(f"CELL_DATA {ncells}\nSCALARS attribute int 1\nLOOKUP_TABLE default\n")
    for a in np.repeat(mesh.element_attributes, s * s).tolist():
        out.write(f"{a}\n")
    if fields:
        out.write(f"POINT_DATA {ne * npe}\n")
        for name, fld in fields.items():
            vals = np.asarray(fld.evaluate_lattice(lattice)).reshape(-1)
            out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            out.writelines(f"{_fmt(v)}\n" for v in vals.tolist())
    return out.getvalue()
