"""Quadtree refinement forest with hanging vertices over a conforming root mesh.

Each root element owns a tree whose nodes are axis-aligned boxes of the root's
reference square.  Mid-edge vertices are registered once per geometric edge in
a hash map keyed by the sorted pair of edge end points; every query about
non-conformity (split edges, masters, slaves) goes through that map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np

from .basis import Basis1D
from .mesh import Mesh, NodalField


class Split(str, Enum):
    NONE = "none"
    ISO = "iso"
    X = "x"  # vertical cut line: left / right children
    Y = "y"  # horizontal cut line: bottom / top children


class EdgeKind(str, Enum):
    CONFORMING = "conforming"
    MASTER = "master"
    SLAVE = "slave"


class Curve(str, Enum):
    MORTON = "morton"
    HILBERT = "hilbert"


@dataclass(frozen=True)
class EdgeRelation:
    kind: EdgeKind
    master: tuple[int, int] | None = None
    # sub-interval of the master parameterised from master[0] to master[1]
    interval: tuple[float, float] | None = None
    # True when the slave's sorted vertex order runs against the master's
    flipped: bool = False
    # chain depth: for slaves the number of splits below the master,
    # for masters the deepest such chain
    depth: int = 0


@dataclass(frozen=True)
class EdgeSplit:
    edge: tuple[int, int]
    split: bool
    mid: int | None = None


@dataclass
class _Node:
    root: int
    box: tuple[Fraction, Fraction, Fraction, Fraction]  # x0, x1, y0, y1
    corners: tuple[int, int, int, int]
    level: int
    split: Split = Split.NONE
    children: tuple[int, ...] = ()


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


class NcForest:
    """Refinement forest; ``leaves`` lists leaf nodes in depth-first Morton order."""

    def __init__(self, mesh: Mesh, max_irregularity: int | None = None):
        if max_irregularity is not None and max_irregularity < 1:
            raise ValueError("irregularity limit must be >= 1")
        self.root = mesh
        self.max_irregularity = max_irregularity
        self.vertex_map: dict[tuple[int, int], int] = {}
        self._coords: list[tuple[float, float]] = [tuple(v) for v in mesh.vertices.tolist()]
        self._geom = mesh.element_coords()
        self._gbasis = mesh.geometry_basis
        zero, one = Fraction(0), Fraction(1)
        self.nodes: list[_Node] = [
            _Node(k, (zero, one, zero, one), tuple(int(v) for v in mesh.elements[k]), 0)
            for k in range(mesh.n_elements)
        ]
        self.leaves: list[int] = list(range(mesh.n_elements))

    # -- geometry -----------------------------------------------------------

    @property
    def vertices(self) -> np.ndarray:
        return np.array(self._coords, dtype=float).reshape(-1, 2)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def _root_point(self, root: int, xi: float, eta: float) -> tuple[float, float]:
        bx = self._gbasis.eval([xi])[0]
        by = self._gbasis.eval([eta])[0]
        x, y = np.einsum("i,j,ijc->c", by, bx, self._geom[root])
        return float(x), float(y)

    def _mid_vertex(self, root: int, a: int, b: int, xi, eta) -> int:
        key = _key(a, b)
        v = self.vertex_map.get(key)
        if v is None:
            v = len(self._coords)
            self._coords.append(self._root_point(root, float(xi), float(eta)))
            self.vertex_map[key] = v
        return v

    def find_vertex(self, a: int, b: int) -> int | None:
        return self.vertex_map.get(_key(a, b))

    # -- refinement ---------------------------------------------------------

    def _split_node(self, idx: int, split: Split) -> None:
        node = self.nodes[idx]
        if node.split is not Split.NONE:
            raise ValueError(f"tree node {idx} is already refined")
        x0, x1, y0, y1 = node.box
        xm, ym = (x0 + x1) / 2, (y0 + y1) / 2
        v0, v1, v2, v3 = node.corners
        r = node.root
        if split is Split.ISO:
            m01 = self._mid_vertex(r, v0, v1, xm, y0)
            m12 = self._mid_vertex(r, v1, v2, x1, ym)
            m23 = self._mid_vertex(r, v2, v3, xm, y1)
            m30 = self._mid_vertex(r, v3, v0, x0, ym)
            c = self._mid_vertex(r, m01, m23, xm, ym)
            kids = [
                ((x0, xm, y0, ym), (v0, m01, c, m30)),
                ((xm, x1, y0, ym), (m01, v1, m12, c)),
                ((xm, x1, ym, y1), (c, m12, v2, m23)),
                ((x0, xm, ym, y1), (m30, c, m23, v3)),
            ]
        elif split is Split.X:
            m01 = self._mid_vertex(r, v0, v1, xm, y0)
            m23 = self._mid_vertex(r, v2, v3, xm, y1)
            kids = [((x0, xm, y0, y1), (v0, m01, m23, v3)), ((xm, x1, y0, y1), (m01, v1, v2, m23))]
        elif split is Split.Y:
            m12 = self._mid_vertex(r, v1, v2, x1, ym)
            m30 = self._mid_vertex(r, v3, v0, x0, ym)
            kids = [((x0, x1, y0, ym), (v0, v1, m12, m30)), ((x0, x1, ym, y1), (m30, m12, v2, v3))]
        else:
            raise ValueError(f"unknown split kind {split!r}")
        first = len(self.nodes)
        for box, corners in kids:
            self.nodes.append(_Node(r, box, corners, node.level + 1))
        node.split = split
        node.children = tuple(range(first, first + len(kids)))

    def _rebuild_leaves(self) -> None:
        leaves: list[int] = []

        def visit(i):
            node = self.nodes[i]
            if node.split is Split.NONE:
                leaves.append(i)
            else:
                for c in node.children:
                    visit(c)

        for r in range(self.root.n_elements):
            visit(r)
        self.leaves = leaves

    def refine(self, marks) -> "NcForest":
        """Split marked leaves; ``marks`` holds ``(leaf_id, split)`` pairs or bare ids (iso).

        Marks are applied in increasing leaf order so the result does not
        depend on the order they are given in.  With an irregularity limit,
        coarse neighbours are refined until every slave chain is at most
        ``max_irregularity`` deep.
        """
        requested: dict[int, Split] = {}
        for mark in marks:
            leaf, split = (mark, Split.ISO) if np.ndim(mark) == 0 else mark
            leaf = int(leaf)
            if not 0 <= leaf < len(self.leaves):
                raise ValueError(f"invalid leaf id {leaf} (forest has {len(self.leaves)} leaves)")
            try:
                split = Split(split)
            except ValueError:
                raise ValueError(f"unknown split kind {split!r}") from None
            if split is Split.NONE:
                raise ValueError("split kind must be one of iso, x, y")
            prev = requested.get(leaf)
            requested[leaf] = split if prev in (None, split) else Split.ISO
        for leaf in sorted(requested):
            self._split_node(self.leaves[leaf], requested[leaf])
        self._rebuild_leaves()
        if self.max_irregularity is not None:
            self._enforce_limit()
        return self

    def _enforce_limit(self) -> None:
        k = self.max_irregularity
        while True:
            owner = self._edge_owners()
            need: dict[int, set[int]] = {}
            for key, rel in self.edge_relations().items():
                if rel.kind is EdgeKind.MASTER and rel.depth > k:
                    node, local = owner[key]
                    need.setdefault(node, set()).add(local % 2)
            if not need:
                return
            for node in sorted(need):
                axes = need[node]
                # local edges 0, 2 run along x and are cut by an X split
                split = Split.ISO if len(axes) == 2 else (Split.X if 0 in axes else Split.Y)
                self._split_node(node, split)
            self._rebuild_leaves()

    def _edge_owners(self) -> dict[tuple[int, int], tuple[int, int]]:
        owners = {}
        for i in self.leaves:
            c = self.nodes[i].corners
            for le in range(4):
                owners[_key(c[le], c[(le + 1) % 4])] = (i, le)
        return owners

    # -- queries ------------------------------------------------------------

    def edge_split_type(self, v1: int, v2: int, v3: int, v4: int) -> list[EdgeSplit]:
        """Split state of the four edges of the leaf with corners ``(v1, v2, v3, v4)``."""
        quad = (v1, v2, v3, v4)
        if not any(self._same_cycle(self.nodes[i].corners, quad) for i in self.leaves):
            raise ValueError(f"vertices {quad} do not form a current leaf")
        out = []
        for a, b in zip(quad, quad[1:] + quad[:1]):
            mid = self.find_vertex(a, b)
            out.append(EdgeSplit((a, b), mid is not None, mid))
        return out

    @staticmethod
    def _same_cycle(corners, quad) -> bool:
        return any(tuple(corners[s:] + corners[:s]) == tuple(quad) for s in range(4))

    def _leaf_edges(self) -> list[tuple[int, int]]:
        seen: dict[tuple[int, int], None] = {}
        for i in self.leaves:
            c = self.nodes[i].corners
            for le in range(4):
                seen.setdefault(_key(c[le], c[(le + 1) % 4]), None)
        return list(seen)

    def edge_relations(self) -> dict[tuple[int, int], EdgeRelation]:
        """Classify every leaf edge (keyed by its sorted vertex pair).

        Slaves are re-rooted to their ultimate master with the composed
        sub-interval, so chains of any depth resolve in one lookup.
        """
        leaf_edges = set(self._leaf_edges())
        rel: dict[tuple[int, int], EdgeRelation] = {}
        for key in sorted(leaf_edges):
            if key not in self.vertex_map:
                continue
            slaves: list[tuple[tuple[int, int], Fraction, Fraction, int]] = []
            stack = [(key[0], key[1], Fraction(0), Fraction(1), 0)]
            while stack:
                a, b, s, e, d = stack.pop()
                mid = self.vertex_map.get(_key(a, b))
                if mid is None or (d > 0 and _key(a, b) in leaf_edges):
                    slaves.append(((a, b), s, e, d))
                    continue
                m = (s + e) / 2
                stack.append((mid, b, m, e, d + 1))
                stack.append((a, mid, s, m, d + 1))
            depth = max(d for *_, d in slaves)
            rel[key] = EdgeRelation(EdgeKind.MASTER, depth=depth)
            for (a, b), s, e, d in slaves:
                if _key(a, b) not in leaf_edges:
                    raise AssertionError(f"segment {(a, b)} of master {key} is not a leaf edge")
                rel[_key(a, b)] = EdgeRelation(EdgeKind.SLAVE, key, (float(s), float(e)), a > b, d)
        for key in leaf_edges:
            rel.setdefault(key, EdgeRelation(EdgeKind.CONFORMING))
        return rel

    def leaf_order(self, curve: Curve | str = Curve.MORTON) -> list[int]:
        """Leaf ids in depth-first order along a Morton or Hilbert curve."""
        curve = Curve(curve)
        pos = {node: i for i, node in enumerate(self.leaves)}
        out: list[int] = []
        ident = np.eye(2, dtype=int)
        transpose = np.array([[0, 1], [1, 0]])
        anti = np.array([[0, -1], [-1, 0]])

        def quadrant(M, canon):
            # canonical quadrant (cx, cy) in curve frame -> actual (qx, qy)
            v = M @ (2 * np.array(canon) - 1)
            return (int(v[0] + 1) // 2, int(v[1] + 1) // 2)

        iso_pos = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}

        def visit(i, M):
            node = self.nodes[i]
            if node.split is Split.NONE:
                out.append(pos[i])
                return
            kids = node.children
            if curve is Curve.MORTON:
                for c in kids:
                    visit(c, M)
                return
            if node.split is Split.ISO:
                canon = [((0, 0), transpose), ((0, 1), ident), ((1, 1), ident), ((1, 0), anti)]
                for cq, S in canon:
                    visit(kids[iso_pos[quadrant(M, cq)]], M @ S)
            else:
                entry = quadrant(M, (0, 0))
                first = entry[0] if node.split is Split.X else entry[1]
                for c in (kids if first == 0 else kids[::-1]):
                    visit(c, M)

        for r in range(self.root.n_elements):
            visit(r, ident)
        return out

    def leaf_boxes(self) -> list[tuple[int, tuple[float, float, float, float]]]:
        """(root element, reference box) of every leaf."""
        return [(self.nodes[i].root, tuple(float(t) for t in self.nodes[i].box)) for i in self.leaves]

    def leaf_levels(self) -> np.ndarray:
        return np.array([self.nodes[i].level for i in self.leaves], dtype=np.int64)

    def leaf_mesh(self) -> Mesh:
        """The conforming "cut" mesh of all leaves; hanging vertices are ordinary vertices."""
        elements = np.array([self.nodes[i].corners for i in self.leaves], dtype=np.int64)
        attrs = self.root.element_attributes[[self.nodes[i].root for i in self.leaves]]
        boundary, battr = [], []
        for (a, b), attr in zip(self.root.boundary.tolist(), self.root.boundary_attributes.tolist()):
            for seg in self._split_segment(a, b):
                boundary.append(seg)
                battr.append(attr)
        nodes = None
        if self.root.nodes is not None:
            nodes = self._leaf_nodes(elements)
        return Mesh(self.vertices, elements, attrs, boundary, battr, nodes)

    def _split_segment(self, a: int, b: int):
        mid = self.vertex_map.get(_key(a, b))
        if mid is None:
            return [(a, b)]
        return self._split_segment(a, mid) + self._split_segment(mid, b)

    def _leaf_nodes(self, elements) -> NodalField:
        src = self.root.nodes
        basis = Basis1D(src.order, src.kind)
        lattice = basis.nodes
        coords = np.empty((len(self.leaves), len(lattice), len(lattice), 2))
        for j, (root, (x0, x1, y0, y1)) in enumerate(self.leaf_boxes()):
            bx = basis.eval(x0 + (x1 - x0) * lattice)
            by = basis.eval(y0 + (y1 - y0) * lattice)
            coords[j] = np.einsum("ai,bj,ijc->abc", by, bx, self._geom[root])
        return NodalField.from_element_coords(elements, len(self._coords), src.order, src.kind, coords)
