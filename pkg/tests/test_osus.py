import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdi import meshgen, osus, wls
from rdi.mesh import Mesh


@pytest.fixture(scope="module")
def grid():
    return meshgen.flat_grid(12, "alternate")


@pytest.fixture(scope="module")
def grid_op(grid):
    return osus.assemble(grid)


@pytest.fixture(scope="module")
def sphere_op(ico3):
    return osus.assemble(ico3)


def test_rows_sum_to_zero(grid_op, sphere_op):
    for op in (grid_op, sphere_op):
        sums = np.asarray(op.matrix.sum(axis=1)).ravel()
        assert np.max(np.abs(sums)) <= 1e-12


def test_linear_annihilated_on_flat_mesh(grid, grid_op):
    X = grid.vertex_coords
    f = 3 * X[:, 0] - 7 * X[:, 1] + 2
    assert np.max(np.abs(osus.apply(grid_op, f))) <= 1e-10 * np.max(np.abs(f))


def test_quadratic_matches_edge_formula(grid, grid_op):
    X = grid.vertex_coords
    alpha = osus.apply(grid_op, X[:, 0] ** 2)
    H = np.diag([2.0, 0.0])
    E = X[grid.elements][:, :, :2]
    mu = np.roll(E, -1, axis=1) - E
    oracle = -np.einsum("eki,ij,ekj->e", mu, H, mu) / 18.0
    assert np.max(np.abs(alpha - oracle)) <= 1e-12


def test_quad_mesh_uses_bilinear_centers():
    m = meshgen.flat_grid(6, "quad")
    op = osus.assemble(m)
    X = m.vertex_coords
    # bilinear interpolation reproduces x*y; so does the quadratic fit
    assert np.max(np.abs(osus.apply(op, X[:, 0] * X[:, 1]))) <= 1e-12
    assert np.max(np.abs(osus.apply(op, 1 + X[:, 0] - X[:, 1]))) <= 1e-12


def test_unit_vector_touches_only_its_support(grid, grid_op):
    v = 40
    e = np.zeros(grid.n_vertices)
    e[v] = 1.0
    alpha = osus.apply(grid_op, e)
    support = np.array([v in grid_op.row(s)[0] for s in range(grid.n_elements)])
    assert (alpha[~support] == 0).all()
    assert (alpha[support] != 0).any()


def test_row_support_within_stencil_union(grid, grid_op):
    fits = wls.fit_all_nodes(grid)
    for sigma in range(0, grid.n_elements, 17):
        nodes = grid.elem_nodes[sigma]
        union = set()
        for n in nodes:
            union |= set(grid.node_vertex[grid.node_ring(n, fits.ring[n])].tolist())
        cols, _ = grid_op.row(sigma)
        assert set(cols.tolist()) <= union


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_linearity(grid_op, seed):
    rng = np.random.default_rng(seed)
    f, g = rng.normal(size=(2, grid_op.n_nodes))
    lhs = osus.apply(grid_op, f + g)
    rhs = osus.apply(grid_op, f) + osus.apply(grid_op, g)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(lhs)))


def test_constant_annihilated(sphere_op):
    c = 123.5
    assert np.max(np.abs(osus.apply(sphere_op, np.full(sphere_op.n_nodes, c)))) <= 1e-12 * c


def test_apply_checks_length_and_fingerprint(grid, grid_op, ico3):
    with pytest.raises(osus.OperatorError):
        osus.apply(grid_op, np.zeros(grid.n_vertices + 1))
    with pytest.raises(osus.OperatorError):
        osus.apply(grid_op, np.zeros(grid.n_vertices), mesh=ico3)


def test_assembly_deterministic(grid, grid_op):
    assert osus.assemble(grid) == grid_op


def test_save_load_exact(tmp_path, sphere_op, ico3):
    p = tmp_path / "op.osus"
    osus.save(sphere_op, p)
    back = osus.load(p, ico3)
    assert back == sphere_op
    osus.save(back, tmp_path / "again.osus")
    assert (tmp_path / "again.osus").read_bytes() == p.read_bytes()


def test_file_header_layout(tmp_path, sphere_op):
    p = tmp_path / "op.osus"
    osus.save(sphere_op, p)
    buf = p.read_bytes()
    magic, version, n, m, nnz = struct.unpack_from("<4sIQQQ", buf, 0)
    assert (magic, version, n, m, nnz) == (b"OSUS", 1, sphere_op.n_nodes, sphere_op.n_cells, sphere_op.nnz)
    assert buf[32:40] == sphere_op.fingerprint
    off = 40
    indptr = np.frombuffer(buf, "<u8", m + 1, off)
    assert indptr[-1] == nnz
    data = np.frombuffer(buf, "<f8", nnz, off + 8 * (m + 1) + 4 * nnz)
    assert np.array_equal(data, sphere_op.data)


def test_load_rejects_other_mesh(tmp_path, sphere_op):
    p = tmp_path / "op.osus"
    osus.save(sphere_op, p)
    with pytest.raises(osus.OperatorError, match="fingerprint|operator is"):
        osus.load(p, meshgen.icosphere(2))
    moved = meshgen.icosphere(3)
    moved = Mesh.from_arrays(moved.vertex_coords * 1.0000001, moved.elements)
    with pytest.raises(osus.OperatorError, match="fingerprint"):
        osus.load(p, moved)


def test_load_rejects_bad_files(tmp_path, sphere_op):
    p = tmp_path / "op.osus"
    osus.save(sphere_op, p)
    buf = p.read_bytes()
    (tmp_path / "trunc").write_bytes(buf[:100])
    with pytest.raises(osus.OperatorError, match="truncated"):
        osus.load(tmp_path / "trunc")
    (tmp_path / "magic").write_bytes(b"XXXX" + buf[4:])
    with pytest.raises(osus.OperatorError):
        osus.load(tmp_path / "magic")
    (tmp_path / "ver").write_bytes(buf[:4] + struct.pack("<I", 9) + buf[8:])
    with pytest.raises(osus.OperatorError, match="version"):
        osus.load(tmp_path / "ver")


def test_empty_mesh_operator(tmp_path):
    m = Mesh.from_arrays(np.zeros((0, 3)), np.zeros((0, 3), dtype=int))
    op = osus.assemble(m)
    assert op.n_cells == 0 and op.nnz == 0
    osus.save(op, tmp_path / "e.osus")
    back = osus.load(tmp_path / "e.osus", m)
    assert back == op and len(osus.apply(back, np.zeros(0))) == 0


def test_flagged_rows_reported(tmp_path):
    n = 10
    x = np.linspace(0, 1, n + 1)
    coords = np.vstack([np.column_stack([x, np.zeros_like(x)]), np.column_stack([x, np.full_like(x, 1e-7)])])
    tris = []
    for i in range(n):
        a, b, c, d = i, i + 1, n + 1 + i + 1, n + 1 + i
        tris += [(a, b, c), (a, c, d)]
    op = osus.assemble(Mesh.from_arrays(coords, tris))
    assert len(op.flagged_rows) == op.n_cells
    osus.write_flagged_csv(op, tmp_path / "flag.csv")
    rows = (tmp_path / "flag.csv").read_text().splitlines()
    assert rows[0] == "cell_id" and len(rows) == op.n_cells + 1
