"""Edge extraction and H1 degree-of-freedom enumeration for quad meshes.

Shared by the mesh module (deduplicated high-order nodes) and the finite
element spaces.  Local DOF order within an element: the 4 vertices, then the
edge DOFs of reference edges 0..3 following each edge's local direction, then
the interior DOFs lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# reference edges as (start, end) local vertices; counterclockwise
REF_EDGES = ((0, 1), (1, 2), (2, 3), (3, 0))


@dataclass(frozen=True)
class EdgeTable:
    vertices: np.ndarray  # (n_edges, 2), lower vertex id first
    element_edges: np.ndarray  # (n_elements, 4)
    element_flip: np.ndarray  # (n_elements, 4) True where local direction opposes lo -> hi
    edge_elements: list  # per edge, list of (element, local edge)

    def __len__(self) -> int:
        return len(self.vertices)

    def index(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.vertices)}


def build_edges(elements: np.ndarray) -> EdgeTable:
    """Number edges in order of first appearance while sweeping elements."""
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, 4)
    ne = len(elements)
    lookup: dict[tuple[int, int], int] = {}
    verts: list[tuple[int, int]] = []
    adj: list[list[tuple[int, int]]] = []
    elem_edges = np.empty((ne, 4), dtype=np.int64)
    flip = np.zeros((ne, 4), dtype=bool)
    for e, quad in enumerate(elements.tolist()):
        for k, (a, b) in enumerate(REF_EDGES):
            va, vb = quad[a], quad[b]
            key = (va, vb) if va < vb else (vb, va)
            idx = lookup.get(key)
            if idx is None:
                idx = len(verts)
                lookup[key] = idx
                verts.append(key)
                adj.append([])
            elem_edges[e, k] = idx
            flip[e, k] = va > vb
            adj[idx].append((e, k))
    vert_arr = np.array(verts, dtype=np.int64).reshape(-1, 2)
    return EdgeTable(vert_arr, elem_edges, flip, adj)


def local_lex_positions(p: int) -> np.ndarray:
    """Lexicographic index (iy * (p+1) + ix) of every local DOF, in local order."""
    n = p + 1
    pos = [(0, 0), (p, 0), (p, p), (0, p)]  # (ix, iy)
    inner = range(1, p)
    pos += [(k, 0) for k in inner]
    pos += [(p, k) for k in inner]
    pos += [(p - k, p) for k in inner]
    pos += [(0, p - k) for k in inner]
    pos += [(ix, iy) for iy in inner for ix in inner]
    return np.array([iy * n + ix for ix, iy in pos], dtype=np.int64)


@dataclass(frozen=True)
class H1Numbering:
    order: int
    n_dofs: int
    n_vertices: int
    edges: EdgeTable
    local: np.ndarray  # (ne, (p+1)^2) global DOFs in local order
    lex: np.ndarray  # (ne, (p+1)^2) global DOFs in lexicographic order

    def edge_dofs(self, edge: int) -> np.ndarray:
        """Interior DOFs of a global edge, ordered from its lower to its higher vertex."""
        m = self.order - 1
        start = self.n_vertices + edge * m
        return np.arange(start, start + m)


def h1_numbering(elements: np.ndarray, n_vertices: int, order: int) -> H1Numbering:
    """Global H1 enumeration: vertices, then edges (lo -> hi), then element interiors."""
    if order < 1:
        raise ValueError(f"H1 order must be >= 1, got {order}")
    elements = np.asarray(elements, dtype=np.int64).reshape(-1, 4)
    ne = len(elements)
    p = order
    m = p - 1
    edges = build_edges(elements)
    n_edge_dofs = len(edges) * m
    table = np.empty((ne, (p + 1) ** 2), dtype=np.int64)
    table[:, :4] = elements
    col = 4
    k = np.arange(m)
    for le in range(4):
        base = n_vertices + edges.element_edges[:, le] * m
        # local sequence k runs along the local edge direction
        seq = np.where(edges.element_flip[:, le, None], m - 1 - k[None, :], k[None, :])
        table[:, col : col + m] = base[:, None] + seq
        col += m
    interior0 = n_vertices + n_edge_dofs
    table[:, col:] = interior0 + np.arange(ne)[:, None] * m * m + np.arange(m * m)[None, :]
    n_dofs = interior0 + ne * m * m
    lex = np.empty_like(table)
    lex[:, local_lex_positions(p)] = table
    return H1Numbering(p, int(n_dofs), int(n_vertices), edges, table, lex)
