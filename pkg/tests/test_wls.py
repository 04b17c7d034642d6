import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdi import meshgen, osus, wls
from rdi.mesh import Mesh


@pytest.fixture(scope="module")
def plane():
    return meshgen.flat_random(300, seed=7)


def interior_vertices(mesh, margin=0.5):
    return np.flatnonzero(np.abs(mesh.vertex_coords[:, :2]).max(axis=1) < margin)


# -- frames ---------------------------------------------------------------------------


def test_planar_frame(plane):
    v = int(interior_vertices(plane)[0])
    fr = wls.local_frame(plane, v)
    assert np.allclose(np.abs(fr.normal), [0, 0, 1])
    assert np.allclose(fr.basis @ fr.normal, 0)
    assert np.allclose(fr.basis @ fr.basis.T, np.eye(2))
    assert fr.stencil[0] == v and np.allclose(fr.uv[0], 0)
    # uv are the xy offsets up to an in-plane rotation
    offsets = plane.vertex_coords[fr.stencil, :2] - plane.vertex_coords[v, :2]
    assert np.allclose(np.linalg.norm(fr.uv, axis=1), np.linalg.norm(offsets, axis=1))


def test_sphere_normal_is_radial():
    m = meshgen.icosphere(4)
    v = int(np.argmax(m.vertex_coords[:, 2]))
    fr = wls.local_frame(m, v)
    radial = m.vertex_coords[v] / np.linalg.norm(m.vertex_coords[v])
    assert np.degrees(np.arccos(min(1.0, abs(fr.normal @ radial)))) < 5.0


# -- Vandermonde and weights ----------------------------------------------------------------


def test_vandermonde_origin_row():
    V = wls.vandermonde(np.array([[0.0, 0.0], [1.0, 0.5]]), 2)
    assert np.array_equal(V[0], [1, 0, 0, 0, 0, 0])
    assert V.shape[1] == 6


def test_vandermonde_linear_rank():
    V = wls.vandermonde(np.array([[0.0, 0.0], [1.0, 0.0], [0.2, 0.9]]), 1)
    assert np.linalg.matrix_rank(V) == 3


def test_vandermonde_scale_invariant():
    uv = np.random.default_rng(0).normal(size=(10, 2))
    assert np.allclose(wls.vandermonde(uv, 2, h=0.7), wls.vandermonde(3.0 * uv, 2, h=2.1), atol=1e-15)


def test_graded_lex_order():
    V = wls.vandermonde(np.array([[2.0, 3.0]]), 2, h=1.0)
    assert np.array_equal(V[0], [1, 2, 3, 4, 6, 9])


def test_radial_weights_examples():
    uv = np.array([[0.0, 0.0], [0.3, 0.4], [1.0, 0.0]])
    w = wls.radial_weights(uv, rho=1.0)
    assert w[0] == 1.0 and w[2] == 0.0
    t = 0.5
    assert w[1] == pytest.approx((1 - t) ** 4 * (4 * t + 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 3), min_size=2, max_size=30))
def test_radial_weights_nonincreasing(r):
    r = np.sort(np.array(r))
    w = wls.radial_weights(np.column_stack([r, np.zeros_like(r)]), rho=3.5)
    assert (np.diff(w) <= 1e-15).all()


def test_radial_weights_need_support():
    with pytest.raises(ValueError):
        wls.radial_weights(np.array([[1.0, 0.0]]), rho=0.5)
    with pytest.raises(ValueError):
        wls.radial_weights(np.array([[1.0, 0.0]]), rho=0.0)


def test_default_support_keeps_all_weights_positive():
    uv = np.random.default_rng(1).normal(size=(12, 2))
    assert (wls.radial_weights(uv) > 0).all()


# -- fits -------------------------------------------------------------------------------------


def test_constant_fit(plane):
    fit = wls.wls_fit(plane, int(interior_vertices(plane)[3]), np.full(plane.n_vertices, 7.0))
    assert np.allclose(fit.coefficients, [7, 0, 0, 0, 0, 0], atol=1e-12)


def test_linear_reproduction(plane):
    X = plane.vertex_coords
    f = 2 * X[:, 0] - 3 * X[:, 1] + 1
    v = int(interior_vertices(plane)[5])
    fit = wls.wls_fit(plane, v, f)
    got = fit(X[fit.stencil])
    assert np.max(np.abs(got - f[fit.stencil])) <= 1e-12 * np.max(np.abs(f))


def test_quadratic_coefficient_matches_normal_equations(plane):
    X = plane.vertex_coords
    f = X[:, 0] ** 2
    v = int(interior_vertices(plane)[8])
    fit = wls.wls_fit(plane, v, f)
    # oracle: dense weighted normal equations in the same frame
    fr = fit.frame
    A = wls.monomials(fr.uv, 2)
    w = wls.radial_weights(fr.uv)
    W = np.diag(w)
    c = np.linalg.solve(A.T @ W @ A, A.T @ W @ f[fr.stencil])
    assert np.allclose(fit.coefficients, c, atol=1e-9)
    # x^2 in a rotated frame: the Hessian trace is preserved
    assert fit.coefficients[3] + fit.coefficients[5] == pytest.approx(1.0, abs=1e-10)
    if np.allclose(np.abs(fr.basis[0]), [1, 0, 0]):
        assert fit.coefficients[3] == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.integers(0, 299))
def test_polynomial_reproduction(plane, coeffs, v):
    X = plane.vertex_coords
    x, y = X[:, 0], X[:, 1]
    f = np.column_stack([np.ones_like(x), x, y, x * x, x * y, y * y]) @ np.array(coeffs)
    fit = wls.wls_fit(plane, v, f)
    scale = max(1.0, np.max(np.abs(f)))
    assert np.max(np.abs(fit(X[fit.stencil]) - f[fit.stencil])) <= 1e-10 * scale


def test_fit_order_on_refining_grids():
    errs = []
    for n in (8, 16, 32, 64):
        m = meshgen.flat_grid(n)
        op = osus.assemble(m)
        X = m.vertex_coords
        f = np.sin(X[:, 0]) * np.cos(X[:, 1])
        c = m.cell_centers
        walf = osus.apply(op, f) + f[m.elements].mean(axis=1)
        errs.append(np.max(np.abs(walf - np.sin(c[:, 0]) * np.cos(c[:, 1]))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert (orders >= 2 + 0.7).all(), orders


def test_fit_scale_invariant(plane):
    X = plane.vertex_coords
    f = np.sin(3 * X[:, 0]) + X[:, 1] ** 3
    big = Mesh.from_arrays(40.0 * X, plane.elements)
    for v in interior_vertices(plane)[:5]:
        a = wls.wls_fit(plane, int(v), f)
        b = wls.wls_fit(big, int(v), f)
        p = plane.cell_centers[:10]
        assert np.allclose(a(p), b(40.0 * p), rtol=1e-9, atol=1e-12)


def test_enlargement_stops_at_cap(caplog):
    # a sliver strip: every stencil is almost collinear
    n = 12
    x = np.linspace(0, 1, n + 1)
    coords = np.vstack([np.column_stack([x, np.zeros_like(x)]), np.column_stack([x, np.full_like(x, 1e-7)])])
    tris = []
    for i in range(n):
        a, b, c, d = i, i + 1, n + 1 + i + 1, n + 1 + i
        tris += [(a, b, c), (a, c, d)]
    m = Mesh.from_arrays(coords, tris)
    fit = wls.wls_fit(m, 6, coords[:, 0] ** 2, ring=1.5)
    assert fit.flagged and fit.ring == wls.RING_CAP
    fits = wls.fit_all_nodes(m)
    assert fits.flagged.all() and (fits.ring <= wls.RING_CAP).all()


def test_default_rings_by_position():
    m = meshgen.flat_grid(10)
    fits = wls.fit_all_nodes(m)
    bd = m.node_is_boundary
    assert (fits.ring[~bd] >= wls.INTERIOR_RING).all()
    assert (fits.ring[bd] >= wls.BOUNDARY_RING).all()
    assert (fits.ring[~bd] == wls.INTERIOR_RING).mean() > 0.9


# -- WALF ---------------------------------------------------------------------------------------


def test_walf_partition_of_unity(plane):
    f = np.full(plane.n_vertices, 5.0)
    fits = {v: wls.wls_fit(plane, v, f) for v in plane.elements[10]}
    for xi in ([1 / 3] * 3, [0.2, 0.5, 0.3]):
        assert wls.walf_eval(plane, 10, fits, xi) == pytest.approx(5.0)


def test_walf_vertex_collapse(plane):
    X = plane.vertex_coords
    f = np.cos(X[:, 0]) + X[:, 1]
    sigma = 20
    fits = {v: wls.wls_fit(plane, v, f) for v in plane.elements[sigma]}
    v0 = plane.elements[sigma][0]
    # least squares is not interpolatory; the collapse equals fit 0 at its anchor
    assert wls.walf_eval(plane, sigma, fits, [1, 0, 0]) == pytest.approx(fits[v0](X[v0][None])[0])


def test_walf_quadratic_at_center(plane):
    X = plane.vertex_coords
    q = lambda p: 1 + p[:, 0] - 2 * p[:, 1] + 3 * p[:, 0] ** 2 - p[:, 0] * p[:, 1] + 0.5 * p[:, 1] ** 2
    f = q(X)
    for sigma in (0, 50, 200):
        fits = {v: wls.wls_fit(plane, v, f) for v in plane.elements[sigma]}
        got = wls.walf_eval(plane, sigma, fits, wls.center_weights(3))
        assert got == pytest.approx(q(plane.cell_centers[sigma][None])[0], abs=1e-10)


def test_walf_missing_fit(plane):
    with pytest.raises(KeyError):
        wls.walf_eval(plane, 0, {}, [1 / 3] * 3)
