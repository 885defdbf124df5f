"""H1/L2 finite element spaces with their DOF numbering and conforming prolongation."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .basis import Basis1D, NodeKind, gauss_legendre, tensor_grad_2d, tensor_interp_2d
from .linalg import SparseMatrix
from .mesh import Mesh
from .ncmesh import EdgeKind, NcForest
from .topology import H1Numbering, h1_numbering

PROLONGATION = "prolongation"


class Family(str, Enum):
    H1 = "H1"
    L2 = "L2"


class MapType(str, Enum):
    VALUE = "VALUE"
    INTEGRAL = "INTEGRAL"


@dataclass(frozen=True)
class FeCollection:
    family: Family
    order: int
    map_type: MapType = MapType.VALUE
    kind: NodeKind | None = None

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "map_type", MapType(self.map_type))
        if self.family is Family.H1:
            if self.order < 1:
                raise ValueError(f"H1 order must be >= 1, got {self.order}")
            if self.map_type is not MapType.VALUE:
                raise ValueError("H1 spaces always use the VALUE map type")
        elif self.order < 0:
            raise ValueError(f"L2 order must be >= 0, got {self.order}")
        if self.kind is None:
            default = NodeKind.GAUSS_LOBATTO if self.family is Family.H1 else NodeKind.GAUSS_LEGENDRE
            object.__setattr__(self, "kind", default)
        else:
            object.__setattr__(self, "kind", NodeKind(self.kind))
        if self.family is Family.H1 and self.kind is NodeKind.GAUSS_LEGENDRE:
            raise ValueError("H1 nodes must include the end points")

    @property
    def basis(self) -> Basis1D:
        return Basis1D(self.order, self.kind)

    @property
    def dofs_per_element(self) -> int:
        return (self.order + 1) ** 2


def H1(order: int, kind=None) -> FeCollection:
    return FeCollection(Family.H1, order, MapType.VALUE, kind)


def L2(order: int, map_type=MapType.VALUE, kind=None) -> FeCollection:
    return FeCollection(Family.L2, order, map_type, kind)


class FeSpace:
    """DOF layout of a collection on a mesh (or on the leaves of a forest).

    ``dof_table`` lists each element's global DOFs in local order (vertices,
    edges, interior); ``lex_table`` holds the same DOFs lexicographically for
    the tensor kernels.  ``P`` maps true DOFs (T-vectors) to all DOFs
    (L-vectors).
    """

    def __init__(self, mesh: Mesh, coll: FeCollection, forest: NcForest | None = None):
        self.mesh = mesh
        self.coll = coll
        self.forest = forest
        self.basis = coll.basis
        ne = mesh.n_elements
        nloc = coll.dofs_per_element
        self.numbering: H1Numbering | None = None
        if coll.family is Family.H1:
            self.numbering = h1_numbering(mesh.elements, mesh.n_vertices, coll.order)
            self.dof_table = self.numbering.local
            self.lex_table = self.numbering.lex
            self.n_dofs = self.numbering.n_dofs
        else:
            self.lex_table = np.arange(ne * nloc, dtype=np.int64).reshape(ne, nloc)
            self.dof_table = self.lex_table
            self.n_dofs = ne * nloc
        # one-step constraint rows {slave L-dof: (master L-dofs, weights)}
        self.constraints: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        if forest is not None and coll.family is Family.H1:
            self.constraints = _slave_rows(self)
        slaves = np.array(sorted(self.constraints), dtype=np.int64)
        is_true = np.ones(self.n_dofs, dtype=bool)
        is_true[slaves] = False
        self.true_dofs = np.flatnonzero(is_true)
        self.n_true_dofs = len(self.true_dofs)
        self.true_index = np.full(self.n_dofs, -1, dtype=np.int64)
        self.true_index[self.true_dofs] = np.arange(self.n_true_dofs)
        self.conforming = not self.constraints
        self.P = conforming_prolongation(self)

    @property
    def order(self) -> int:
        return self.coll.order

    @property
    def n_elements(self) -> int:
        return self.mesh.n_elements

    def prolong(self, X) -> np.ndarray:
        return true_to_local(self, X)

    def restrict(self, x) -> np.ndarray:
        return local_to_true(self, x)


def build_space(source, coll: FeCollection) -> FeSpace:
    """Space on a :class:`Mesh`, or on the cut mesh of a :class:`NcForest` with constraints."""
    if isinstance(source, NcForest):
        return FeSpace(source.leaf_mesh(), coll, forest=source)
    if isinstance(source, Mesh):
        return FeSpace(source, coll)
    raise TypeError(f"expected Mesh or NcForest, got {type(source).__name__}")


def _slave_rows(space: FeSpace) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Interpolate every slave-edge DOF from the DOFs of its ultimate master edge."""
    num = space.numbering
    basis = space.basis
    xi = basis.nodes
    p = space.order
    edge_id = num.edges.index()
    rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for key, rel in space.forest.edge_relations().items():
        if rel.kind is not EdgeKind.SLAVE:
            continue
        mlo, mhi = rel.master
        master = np.concatenate(([mlo], num.edge_dofs(edge_id[rel.master]), [mhi]))
        s, e = rel.interval
        # master parameter of the slave's local coordinate 0..1 (slave lo -> hi)
        if rel.flipped:
            t_of = lambda u: e - (e - s) * u  # noqa: E731
        else:
            t_of = lambda u: s + (e - s) * u  # noqa: E731
        lo, hi = key
        dofs = [lo] + list(num.edge_dofs(edge_id[key])) + [hi]
        for j, dof in enumerate(dofs):
            if dof == mlo or dof == mhi or dof in rows:
                continue
            w = basis.eval([float(t_of(xi[j]))])[0]
            nz = w != 0.0
            rows[int(dof)] = (master[nz].astype(np.int64), w[nz])
    return rows


def _resolve_rows(space: FeSpace) -> dict[int, dict[int, float]]:
    """Substitute constraints until every slave row references true DOFs only."""
    resolved: dict[int, dict[int, float]] = {}
    active: set[int] = set()

    def resolve(d: int) -> dict[int, float]:
        if d in resolved:
            return resolved[d]
        if d in active:
            raise RuntimeError(f"cyclic constraint through DOF {d}")
        active.add(d)
        out: dict[int, float] = {}
        for m, w in zip(*space.constraints[d]):
            m = int(m)
            if m in space.constraints:
                for t, v in resolve(m).items():
                    out[t] = out.get(t, 0.0) + w * v
            else:
                out[m] = out.get(m, 0.0) + w
        active.discard(d)
        resolved[d] = out
        return out

    for d in sorted(space.constraints):
        resolve(d)
    return resolved


def conforming_prolongation(space: FeSpace) -> SparseMatrix:
    """``P`` with unit rows for true DOFs and interpolation rows for slaves."""
    n, nt = space.n_dofs, space.n_true_dofs
    if space.conforming:
        return SparseMatrix.identity(n, kind=PROLONGATION)
    rows = [space.true_dofs]
    cols = [np.arange(nt)]
    vals = [np.ones(nt)]
    for d, row in _resolve_rows(space).items():
        keys = np.fromiter(row.keys(), dtype=np.int64, count=len(row))
        rows.append(np.full(len(row), d))
        cols.append(space.true_index[keys])
        vals.append(np.fromiter(row.values(), dtype=float, count=len(row)))
    P = SparseMatrix.from_coo(
        np.concatenate(rows), np.concatenate(cols), np.concatenate(vals), (n, nt), kind=PROLONGATION
    )
    if np.any(P.indices < 0):
        raise RuntimeError("slave row references a constrained DOF after resolution")
    return P


def _one_level_rows(space: FeSpace) -> dict:
    """Constraints of every sub-edge against its immediate parent edge.

    Nodes are ``("v", vertex)`` or ``("e", edge_key, j)``; intermediate edges
    of a refinement chain get virtual nodes that no L-vector stores.
    """
    forest = space.forest
    basis = space.basis
    xi = basis.nodes
    m = space.order - 1
    vmap = forest.vertex_map

    def nodes_of(key):
        return [("v", key[0])] + [("e", key, j) for j in range(m)] + [("v", key[1])]

    rows: dict = {}
    for master, rel in forest.edge_relations().items():
        if rel.kind is not EdgeKind.MASTER:
            continue
        stack = [master]
        while stack:
            a, b = stack.pop()  # directed along the master, lo -> hi
            mid = vmap.get((min(a, b), max(a, b)))
            if mid is None:
                continue
            pkey = (min(a, b), max(a, b))
            parent = nodes_of(pkey)
            for child, t0 in (((a, mid), 0.0), ((mid, b), 0.5)):
                ckey = (min(child), max(child))
                # directed parent parameter of the child's storage-order nodes
                if ckey[0] == child[0]:
                    t = t0 + 0.5 * xi
                else:
                    t = t0 + 0.5 * (1.0 - xi)
                u = t if pkey[0] == a else 1.0 - t
                W = basis.eval(u)
                cnodes = nodes_of(ckey)
                for j, node in enumerate(cnodes):
                    if node == ("v", mid) or node[0] == "e":
                        rows.setdefault(node, (parent, W[j]))
                stack.append(child)
    return rows


def generation_chain(space: FeSpace):
    """Factors ``P_1 .. P_k`` of the generation-by-generation interpolation.

    Built only from parent-edge interpolation, independently of the rows in
    ``space.P``.  Every node gets a generation (0 for true DOFs, else one
    more than the largest generation among its parent nodes); ``P_g`` maps
    the values of generations ``< g`` to those of generations ``<= g``.
    Returns the factors and the node list in generation order.
    """
    rows = _one_level_rows(space) if space.forest is not None else {}
    gen: dict = {}
    active: set = set()

    def generation(node) -> int:
        if node in gen:
            return gen[node]
        if node not in rows:
            gen[node] = 0
            return 0
        if node in active:
            raise RuntimeError(f"cyclic constraint through {node}")
        active.add(node)
        g = 1 + max(generation(q) for q in rows[node][0])
        active.discard(node)
        gen[node] = g
        return g

    num = space.numbering
    base = [("v", i) for i in range(num.n_vertices)]
    base += [("e", tuple(int(v) for v in key), j) for key in num.edges.vertices for j in range(space.order - 1)]
    for node in list(rows) + base:
        generation(node)
    order = sorted(gen, key=lambda nd: (gen[nd], repr(nd)))
    pos = {nd: i for i, nd in enumerate(order)}
    k = max(gen.values(), default=0)
    counts = np.bincount([gen[nd] for nd in order], minlength=k + 1)
    factors = []
    for g in range(1, k + 1):
        n_in = int(counts[:g].sum())
        n_out = n_in + int(counts[g])
        r, c, v = list(range(n_in)), list(range(n_in)), [1.0] * n_in
        for nd in order[n_in:n_out]:
            parents, w = rows[nd]
            r.extend([pos[nd]] * len(parents))
            c.extend(pos[q] for q in parents)
            v.extend(w.tolist())
        factors.append(SparseMatrix.from_coo(r, c, v, (n_out, n_in), kind=PROLONGATION))
    return factors, order


def chain_prolongation(space: FeSpace) -> np.ndarray:
    """Dense ``P`` recomputed as the product ``P_k ... P_1``, rows in L order."""
    factors, order = generation_chain(space)
    num = space.numbering
    n0 = len(order) if not factors else factors[0].shape[1]
    prod = np.eye(n0)
    for f in factors:
        prod = f.to_dense() @ prod
    pos = {nd: i for i, nd in enumerate(order)}
    # generation-0 nodes are exactly the true vertex/edge DOFs
    lrow = {}
    for i in range(num.n_vertices):
        lrow[i] = pos[("v", i)]
    for e, key in enumerate(num.edges.vertices):
        key = tuple(int(v) for v in key)
        for j, d in enumerate(num.edge_dofs(e)):
            lrow[int(d)] = pos[("e", key, j)]
    out = np.zeros((space.n_dofs, space.n_true_dofs))
    col_of_node = {}
    for d, r in lrow.items():
        if r < n0:
            col_of_node[r] = space.true_index[d]
    if len(col_of_node) != n0 or min(col_of_node.values(), default=0) < 0:
        raise RuntimeError("generation-0 nodes do not match the true DOFs")
    cols = np.array([col_of_node[i] for i in range(n0)], dtype=np.int64)
    for d in range(space.n_dofs):
        if d in lrow:
            out[d, cols] = prod[lrow[d]]
        else:
            out[d, space.true_index[d]] = 1.0
    return out


def validate_prolongation(space: FeSpace, tol: float = 1e-13) -> float:
    """Largest difference between ``P`` and the generation-chain product; raises above ``tol``."""
    if space.conforming:
        return 0.0
    diff = float(np.abs(chain_prolongation(space) - space.P.to_dense()).max())
    if diff > tol:
        raise RuntimeError(f"prolongation disagrees with the generation chain by {diff:.3e}")
    return diff


def true_to_local(space: FeSpace, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (space.n_true_dofs,):
        raise ValueError(f"T-vector must have length {space.n_true_dofs}, got {X.shape}")
    if space.conforming:
        return X.copy()
    return space.P @ X


def local_to_true(space: FeSpace, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (space.n_dofs,):
        raise ValueError(f"L-vector must have length {space.n_dofs}, got {x.shape}")
    return x[space.true_dofs].copy()


def boundary_attributes(space: FeSpace) -> set[int]:
    return set(space.mesh.boundary_attributes.tolist())


def essential_dofs(space: FeSpace, attributes=None) -> np.ndarray:
    """Sorted true-DOF ids supported on boundary segments with the given attributes."""
    mesh = space.mesh
    present = boundary_attributes(space)
    attrs = present if attributes is None else {int(a) for a in attributes}
    unknown = attrs - present
    if unknown:
        raise ValueError(f"unknown boundary attribute(s) {sorted(unknown)}")
    if space.coll.family is not Family.H1:
        return np.zeros(0, dtype=np.int64)
    num = space.numbering
    edge_id = num.edges.index()
    sel = np.isin(mesh.boundary_attributes, list(attrs))
    dofs: list[int] = []
    for a, b in mesh.boundary[sel].tolist():
        dofs += [a, b]
        dofs += num.edge_dofs(edge_id[(min(a, b), max(a, b))]).tolist()
    local = np.unique(np.array(dofs, dtype=np.int64))
    tidx = space.true_index[local]
    if np.any(tidx < 0):
        raise RuntimeError("boundary DOF is constrained")
    return np.sort(tidx)


class GridFunction:
    """An L-vector of DOF values tied to a space."""

    def __init__(self, space: FeSpace, values=None):
        self.space = space
        if values is None:
            values = np.zeros(space.n_dofs)
        values = np.asarray(values, dtype=float)
        if values.shape != (space.n_dofs,):
            raise ValueError(f"GridFunction needs {space.n_dofs} values, got {values.shape}")
        self.values = values

    def element_values(self) -> np.ndarray:
        n = self.space.order + 1
        return self.values[self.space.lex_table].reshape(-1, n, n)

    def _weight(self, points) -> np.ndarray:
        _, J = self.space.mesh.map_lattice(points, jacobian=True)
        return J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]

    def evaluate_lattice(self, points) -> np.ndarray:
        """Values on the ``points x points`` lattice of every element, ``(ne, nq, nq)``."""
        B = self.space.basis.eval(points)
        vals = tensor_interp_2d(B, self.element_values())
        if self.space.coll.map_type is MapType.INTEGRAL:
            vals = vals / self._weight(points)
        return vals

    def reference_gradient_lattice(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Derivatives with respect to the reference coordinates on the lattice."""
        if self.space.coll.map_type is MapType.INTEGRAL:
            raise NotImplementedError("gradients of INTEGRAL-mapped functions")
        B = self.space.basis.eval(points)
        G = self.space.basis.deriv(points)
        return tensor_grad_2d(B, G, self.element_values())

    def evaluate(self, element: int, ref_points) -> np.ndarray:
        """Values at arbitrary reference points ``(npts, 2)`` of one element."""
        ref = np.atleast_2d(np.asarray(ref_points, dtype=float))
        bx = self.space.basis.eval(ref[:, 0])
        by = self.space.basis.eval(ref[:, 1])
        V = self.element_values()[element]
        vals = np.einsum("qi,qj,ij->q", by, bx, V)
        if self.space.coll.map_type is MapType.INTEGRAL:
            from .mesh import transformation

            vals = vals / transformation(self.space.mesh, element).weight(ref)
        return vals


def _node_lattice(space: FeSpace):
    return space.mesh.map_lattice(space.basis.nodes, jacobian=True)


def project_coefficient(space: FeSpace, f, conforming: bool = True) -> GridFunction:
    """Nodal interpolant of ``f(x, y)``.

    On non-conforming spaces the result is made conforming by keeping the true
    DOF values and re-interpolating the constrained ones (``P R x``); pass
    ``conforming=False`` to keep the raw nodal values everywhere.
    """
    X, J = _node_lattice(space)
    vals = np.broadcast_to(np.asarray(f(X[..., 0], X[..., 1]), dtype=float), X.shape[:-1])
    if space.coll.map_type is MapType.INTEGRAL:
        vals = vals * (J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0])
    values = np.zeros(space.n_dofs)
    values[space.lex_table.ravel()] = vals.reshape(-1)
    if conforming and not space.conforming:
        values = space.P @ values[space.true_dofs]
    return GridFunction(space, values)


def element_l2_errors(g: GridFunction, u_exact) -> np.ndarray:
    """Per-element ``||g - u||_{L2(K)}`` with ``p + 3`` Gauss-Legendre points per axis."""
    rule = gauss_legendre(g.space.order + 3)
    X, J = g.space.mesh.map_lattice(rule.points, jacobian=True)
    det = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
    uh = g.evaluate_lattice(rule.points)
    u = np.broadcast_to(np.asarray(u_exact(X[..., 0], X[..., 1]), dtype=float), uh.shape)
    w = np.outer(rule.weights, rule.weights)
    return np.sqrt(np.einsum("ab,eab->e", w, det * (uh - u) ** 2))


def compute_l2_error(g: GridFunction, u_exact) -> float:
    return float(np.sqrt(np.sum(element_l2_errors(g, u_exact) ** 2)))
