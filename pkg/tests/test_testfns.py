import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdi import meshgen, testfns
from rdi.testfns import C0, C1, SMOOTH, WEAK


def sph(theta, phi=0.0):
    theta, phi = np.broadcast_arrays(np.atleast_1d(theta), np.atleast_1d(phi))
    return np.column_stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


# -- values ----------------------------------------------------------------------------------


def test_f1_end_values():
    assert testfns.eval("f1", sph(0.0))[0] == 1.0
    assert testfns.eval("f1", sph(np.pi))[0] == pytest.approx(0.12)


def test_f2_north_pole_value():
    assert testfns.eval("f2", sph(0.0, 0.0))[0] == pytest.approx(0.0)
    assert testfns.eval("f2", sph(0.1, np.pi))[0] == pytest.approx(-2000.0)


def test_f5_branches_agree_at_half():
    assert testfns.eval("f5", [[0.5, 0.0]])[0] == pytest.approx(0.0, abs=1e-15)


def test_f1_crease_values_match():
    eps = 1e-9
    for t0 in (5 * np.pi / 18, np.pi / 2):
        lo, hi = testfns.f1(sph([t0 - eps, t0 + eps]))
        assert hi == pytest.approx(lo, abs=1e-7)
    assert 1.7 - 2.52 * 5 / 18 == pytest.approx(1.0)
    assert 1.7 - 2.52 / 2 == pytest.approx(0.44)


def test_f1_jumps():
    eps = 1e-9
    for t0, jump in ((13 * np.pi / 18, 0.2), (9 * np.pi / 10, 0.12)):
        lo, hi = testfns.f1(sph([t0 - eps, t0 + eps]))
        assert lo - hi == pytest.approx(jump)


def test_f2_profile_continuity():
    piece = testfns._f2_piece
    eps = 1e-9
    for t0 in (np.pi / 2, 3 * np.pi / 4, 7 * np.pi / 8):
        assert piece(np.array([t0 - eps]))[0] == pytest.approx(piece(np.array([t0 + eps]))[0], abs=1e-6)
    assert piece(np.array([np.pi / 4 + eps]))[0] - piece(np.array([np.pi / 4 - eps]))[0] == pytest.approx(0.5)


def test_f7_spans_point_set():
    x = np.linspace(-2, 6, 9)
    pts = np.column_stack([x, np.zeros_like(x), np.zeros_like(x)])
    f = testfns.f7(pts)
    assert f[0] == 0.0
    assert f[-1] == pytest.approx(8 * (16 * 0.25**3 + 0.75))


def test_curve_profiles():
    assert testfns.g2(np.array([0.5, 1.0, 3.0])).tolist() == [0.5, 1.0, 2.0]
    assert testfns.g1(1.0, 2.0, 0.0, 0.5)[()] == 1.0
    assert testfns.g1(1.0, 2.0, 1.0, 0.5)[()] == pytest.approx(0.5 + 1.5 * 1.5)


def test_spherical_conversion_ranges():
    p = np.random.default_rng(0).normal(size=(200, 3))
    theta, phi = testfns.spherical(p)
    assert (theta >= 0).all() and (theta <= np.pi).all()
    assert (phi >= 0).all() and (phi < 2 * np.pi).all()
    back = sph(theta, phi) * np.linalg.norm(p, axis=1)[:, None]
    assert np.allclose(back, p)


def test_unknown_name():
    with pytest.raises(KeyError, match="unknown"):
        testfns.eval("f99", [[0, 0, 1]])


# -- truth sets --------------------------------------------------------------------------------


def test_f1_truth_classes():
    tf = testfns.get("f1")
    labels = tf.classify(sph([5 * np.pi / 18, np.pi / 2, 13 * np.pi / 18, 9 * np.pi / 10, 0.3]), 1e-3)
    assert labels.tolist() == [C1, C1, C0, C0, SMOOTH]


def test_f2_weak_jump_on_equator():
    tf = testfns.get("f2")
    # on x = 0 at the equator the two sides agree; far from it they differ by 4000
    labels = tf.classify(sph([np.pi / 2 + 0.01, 0.3], [np.pi / 2, np.pi / 2]), 0.02)
    assert labels.tolist() == [WEAK, C0]


def test_f5_truth_loci():
    tf = testfns.get("f5")
    labels = tf.classify([[0, 0], [0.5, 0], [0, -0.5], [0.25, 0], [0.9, 0]], 1e-3)
    assert labels.tolist() == [C1, C1, C1, SMOOTH, SMOOTH]


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["f1", "f2", "f3", "f5", "f6", "step", "abs_x"]), st.floats(1e-3, 0.2), st.floats(1e-3, 0.2))
def test_truth_bands_nested(name, b1, b2):
    b1, b2 = sorted([b1, b2])
    m = meshgen.icosphere(3) if name in ("f1", "f2", "f6") else meshgen.flat_grid(20)
    small, big = testfns.truth_set(name, m, b1), testfns.truth_set(name, m, b2)
    for cls in (C0, C1):
        assert ((small == cls) <= (big != SMOOTH)).all()
    assert ((small != SMOOTH) <= (big != SMOOTH)).all()


def test_truth_csv(tmp_path):
    labels = np.array([0, 2, 1, -1])
    testfns.write_truth_csv(labels, tmp_path / "t.csv")
    assert (tmp_path / "t.csv").read_text() == "node_id,class\n0,0\n1,2\n2,1\n3,-1\n"


# -- generators -------------------------------------------------------------------------------------


def test_icosphere_base():
    m = meshgen.icosphere(0)
    assert (m.n_vertices, m.n_elements) == (12, 20)


@pytest.mark.parametrize("level", [1, 2, 3])
def test_icosphere_counts(level):
    m = meshgen.icosphere(level)
    assert (m.n_vertices, m.n_elements) == (10 * 4**level + 2, 20 * 4**level)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_cubed_sphere_counts(n):
    m = meshgen.cubed_sphere(n)
    assert m.arity == 4
    assert (m.n_elements, m.n_vertices) == (6 * n * n, 6 * n * n + 2)
    assert len(m.boundary_halffacets) == 0


@pytest.mark.parametrize("make", [lambda: meshgen.icosphere(4), lambda: meshgen.cubed_sphere(10)])
def test_sphere_vertices_on_unit_sphere(make):
    assert np.max(np.abs(np.linalg.norm(make().vertex_coords, axis=1) - 1)) <= 1e-12


def test_flat_random_is_delaunay():
    m = meshgen.flat_random(500, seed=4)
    X = m.vertex_coords[:, :2]
    assert np.abs(X).max() <= 1.0
    assert (m.element_areas > 0).all()
    rng = np.random.default_rng(0)
    for e in rng.choice(m.n_elements, 100, replace=False):
        a, b, c = X[m.elements[e]]
        # circumcircle from the perpendicular-bisector system
        A = 2 * np.array([b - a, c - a])
        rhs = np.array([b @ b - a @ a, c @ c - a @ a])
        center = np.linalg.solve(A, rhs)
        r2 = np.sum((a - center) ** 2)
        d2 = np.sum((X - center) ** 2, axis=1)
        others = np.setdiff1d(np.arange(len(X)), m.elements[e])
        assert (d2[others] >= r2 * (1 - 1e-9)).all()


def test_flat_random_seeded():
    a, b = meshgen.flat_random(100, seed=9), meshgen.flat_random(100, seed=9)
    assert np.array_equal(a.vertex_coords, b.vertex_coords) and np.array_equal(a.elements, b.elements)


def test_cylinder_closed(cyl):
    assert len(cyl.boundary_halffacets) == 0
    cyl.check_invariants()
    z = cyl.vertex_coords[:, 2]
    r = np.hypot(cyl.vertex_coords[:, 0], cyl.vertex_coords[:, 1])
    side = (z > z.min() + 1e-12) & (z < z.max() - 1e-12)
    assert np.allclose(r[side], 1.0)


@pytest.mark.parametrize("bad", [
    lambda: meshgen.icosphere(-1), lambda: meshgen.cubed_sphere(0), lambda: meshgen.flat_grid(0),
    lambda: meshgen.flat_random(0), lambda: meshgen.cylinder(2, 4), lambda: meshgen.flat_grid(4, "zigzag"),
])
def test_generator_parameter_errors(bad):
    with pytest.raises(ValueError):
        bad()


def test_refine_region_sphere():
    base = meshgen.icosphere(2)
    cap = lambda p: p[:, 2] > 0.5
    m = meshgen.refine_region(base, cap, levels=2, project=lambda p: p / np.linalg.norm(p, axis=1, keepdims=True))
    m.check_invariants()
    assert len(m.boundary_halffacets) == 0
    assert np.allclose(np.linalg.norm(m.vertex_coords, axis=1), 1.0)
    edge = lambda mesh, sel: np.mean([
        np.linalg.norm(mesh.vertex_coords[a] - mesh.vertex_coords[b])
        for a, b in mesh.edges if sel(mesh.vertex_coords[a]) and sel(mesh.vertex_coords[b])
    ])
    inside = lambda x: x[2] > 0.8
    outside = lambda x: x[2] < -0.5
    assert edge(m, inside) < 0.35 * edge(m, outside)
    assert edge(m, outside) == pytest.approx(edge(base, outside))


def test_refine_region_plane_conforming():
    base = meshgen.flat_grid(6)
    m = meshgen.refine_region(base, lambda p: p[:, 0] < 0, levels=1)
    m.check_invariants()
    # the outer boundary length is unchanged and no hanging vertices exist
    assert m.element_areas.sum() == pytest.approx(4.0)
    bd = m.boundary_halffacets
    a, b = m.halffacet_vertices(bd)
    assert np.sum(np.linalg.norm(m.vertex_coords[a] - m.vertex_coords[b], axis=1)) == pytest.approx(8.0)
