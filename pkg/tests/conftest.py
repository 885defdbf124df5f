import numpy as np
import pytest

from tensorfem.mesh import curve_mesh, make_cartesian
from tensorfem.ncmesh import EdgeKind, NcForest

SPLITS = ("iso", "x", "y")


def random_forest(seed, steps, nx=2, ny=2, max_irregularity=None, mesh=None):
    """Forest on an nx x ny square refined one random leaf at a time."""
    rng = np.random.default_rng(seed)
    f = NcForest(mesh if mesh is not None else make_cartesian(nx, ny), max_irregularity)
    for _ in range(steps):
        leaf = int(rng.integers(f.n_leaves))
        f.refine([(leaf, SPLITS[int(rng.integers(3))])])
    return f


def chain_forest(depth):
    """2x1 mesh whose left root is refined ``depth`` times toward the shared edge."""
    f = NcForest(make_cartesian(2, 1))
    for level in range(depth):
        f.refine([level])
    return f


def max_depth(forest):
    rel = forest.edge_relations().values()
    return max((r.depth for r in rel if r.kind is EdgeKind.MASTER), default=0)


def wavy(x, y):
    return x + 0.05 * np.sin(np.pi * y), y + 0.04 * np.sin(np.pi * x)


@pytest.fixture
def curved_mesh():
    return curve_mesh(make_cartesian(3, 3), 2, wavy)


@pytest.fixture
def nc_forest():
    return random_forest(7, 20, nx=3, ny=3)


def dof_coords(space):
    """Physical position of every L-dof (node-based spaces)."""
    X = space.mesh.map_lattice(space.basis.nodes)
    out = np.zeros((space.n_dofs, 2))
    out[space.lex_table.ravel()] = X.reshape(-1, 2)
    return out


def interface_jump(gf, n_points=5):
    """Largest jump of ``gf`` across element interfaces of an axis-aligned mesh.

    Samples ``n_points`` interior points on every element edge and evaluates
    the function from every element whose boundary contains the point.
    """
    m = gf.space.mesh
    v = m.vertices[m.elements]
    lo, hi = v.min(axis=1), v.max(axis=1)
    ts = (np.arange(n_points) + 0.5) / n_points
    worst = 0.0
    for e in range(m.n_elements):
        for k in range(4):
            a, b = v[e, k], v[e, (k + 1) % 4]
            pts = a[None] + ts[:, None] * (b - a)[None]
            for x in pts:
                inside = np.all((lo - 1e-12 <= x) & (x <= hi + 1e-12), axis=1)
                vals = []
                for f in np.flatnonzero(inside):
                    ref = (x - lo[f]) / (hi[f] - lo[f])
                    vals.append(gf.evaluate(f, ref[None])[0])
                worst = max(worst, max(vals) - min(vals))
    return worst


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
