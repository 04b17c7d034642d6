"""Mesh generators for the test problems: spheres, planes and a closed cylinder."""
from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import Mesh


def _check_positive(**kw):
    for name, value in kw.items():
        if not value > 0:
            raise ValueError("%s must be positive, got %r" % (name, value))


def _midpoints(tris, coords, cache_project=None):
    """Split every triangle 1-to-4; returns new coords and triangles."""
    e = np.sort(np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1), axis=2)
    edges, inv = np.unique(e.reshape(-1, 2), axis=0, return_inverse=True)
    mid = 0.5 * (coords[edges[:, 0]] + coords[edges[:, 1]])
    if cache_project is not None:
        mid = cache_project(mid)
    m = len(coords) + inv.reshape(-1, 3)
    a, b, c = tris.T
    ab, bc, ca = m.T
    new = np.concatenate(
        [np.column_stack(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
    )
    return np.vstack([coords, mid]), new


def _to_sphere(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def icosphere(level: int = 0) -> Mesh:
    """Unit icosphere: the icosahedron subdivided ``level`` times (10 * 4^level + 2 vertices)."""
    if level < 0:
        raise ValueError("level must be nonnegative")
    t = (1.0 + 5**0.5) / 2.0
    coords = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    tris = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    coords = _to_sphere(coords)
    for _ in range(level):
        coords, tris = _midpoints(tris, coords, _to_sphere)
    return Mesh.from_arrays(coords, tris)


def cubed_sphere(n: int) -> Mesh:
    """Equiangular gnomonic cubed sphere: 6 n^2 quads and 6 n^2 + 2 vertices."""
    if not (isinstance(n, (int, np.integer)) and n > 0):
        raise ValueError("n must be a positive integer")
    ij = np.arange(n + 1)
    keys, quads = [], []
    base = 0
    for axis in range(3):
        for side in (0, n):
            a, b = [d for d in range(3) if d != axis]
            I, J = np.meshgrid(ij, ij, indexing="ij")
            k = np.zeros((n + 1, n + 1, 3), dtype=np.int64)
            k[..., axis] = side
            k[..., a] = I
            k[..., b] = J
            keys.append(k.reshape(-1, 3))
            idx = base + np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
            base += (n + 1) ** 2
            q = np.stack(
                [idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]], axis=-1
            ).reshape(-1, 4)
            quads.append(q)
    keys = np.concatenate(keys)
    quads = np.concatenate(quads)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    quads = inv.ravel()[quads]
    cube = np.tan(np.pi / 4 * (2.0 * uniq / n - 1.0))
    # snap the face coordinate exactly to +-1
    cube[uniq == 0] = -1.0
    cube[uniq == n] = 1.0
    coords = _to_sphere(cube)
    quads = _orient_outward(coords, quads, coords[quads].mean(axis=1))
    return Mesh.from_arrays(coords, quads)


def _orient_outward(coords, elems, outward):
    x = coords[elems]
    x = x - x[:, :1]
    n = 0.5 * np.cross(x, np.roll(x, -1, axis=1)).sum(axis=1)
    flip = np.einsum("ij,ij->i", n, outward) < 0
    elems = elems.copy()
    elems[flip] = elems[flip][:, ::-1]
    return elems


def flat_grid(n: int, pattern: str = "right", extent=(-1.0, 1.0)) -> Mesh:
    """Structured grid of ``[lo, hi]^2`` with ``n`` cells per side.

    ``pattern``: ``'right'`` splits every square along the same diagonal
    (interior valence 6), ``'alternate'`` flips the diagonal in a
    checkerboard, ``'quad'`` keeps the squares.
    """
    if not (isinstance(n, (int, np.integer)) and n > 0):
        raise ValueError("n must be a positive integer")
    lo, hi = extent
    x = np.linspace(lo, hi, n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    coords = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b, c, d = idx[:-1, :-1], idx[1:, :-1], idx[1:, 1:], idx[:-1, 1:]
    if pattern == "quad":
        elems = np.stack([a, b, c, d], axis=-1).reshape(-1, 4)
    elif pattern in ("right", "alternate"):
        t1 = np.stack([a, b, c], axis=-1)
        t2 = np.stack([a, c, d], axis=-1)
        if pattern == "alternate":
            I, J = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            flip = ((I + J) % 2 == 1)[..., None]
            t1 = np.where(flip, np.stack([a, b, d], axis=-1), t1)
            t2 = np.where(flip, np.stack([b, c, d], axis=-1), t2)
        elems = np.concatenate([t1.reshape(-1, 3), t2.reshape(-1, 3)])
    else:
        raise ValueError("unknown grid pattern %r" % pattern)
    return Mesh.from_arrays(coords, elems)


def flat_random(n_points: int, seed: int | None = 0, extent=(-1.0, 1.0)) -> Mesh:
    """Delaunay triangulation of the square's corners plus ``n_points`` uniform samples."""
    _check_positive(n_points=n_points)
    lo, hi = extent
    rng = np.random.default_rng(seed)
    pts = rng.uniform(lo, hi, size=(n_points, 2))
    corners = np.array([[lo, lo], [hi, lo], [hi, hi], [lo, hi]])
    pts = np.vstack([corners, pts])
    tri = Delaunay(pts).simplices
    coords = np.column_stack([pts, np.zeros(len(pts))])
    tris = _orient_outward(coords, tri, np.tile([0.0, 0.0, 1.0], (len(tri), 1)))
    # drop slivers Qhull may leave along the hull
    x = coords[tris]
    area = 0.5 * np.abs(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])[:, 2])
    tris = tris[area > 1e-14 * (hi - lo) ** 2]
    return Mesh.from_arrays(coords, tris)


def _zip_rings(inner, inner_ang, outer, outer_ang):
    """Triangulate the annulus between two closed rings sorted by angle."""
    na, nb = len(inner), len(outer)

    def unwrapped(ang, i, n):
        return ang[i] if i < n else ang[i - n] + 2 * np.pi

    tris = []
    i = j = 0
    while i < na or j < nb:
        if i < na and (j == nb or unwrapped(inner_ang, i + 1, na) < unwrapped(outer_ang, j + 1, nb)):
            tris.append((inner[i], outer[j % nb], inner[(i + 1) % na]))
            i += 1
        else:
            tris.append((inner[i % na], outer[j], outer[(j + 1) % nb]))
            j += 1
    return tris


def cylinder(nr: int, nz: int, radius: float = 1.0, height: float = 2.0) -> Mesh:
    """Closed triangulated cylinder centered at the origin with its axis along z.

    The lateral surface has ``nr`` vertices per ring and ``nz`` layers; each
    cap is filled with concentric rings of roughly matching spacing.
    """
    if not (int(nr) == nr and int(nz) == nz and nr >= 3 and nz >= 1):
        raise ValueError("need integer nr >= 3 and nz >= 1")
    _check_positive(radius=radius, height=height)
    nr, nz = int(nr), int(nz)
    ang = 2 * np.pi * np.arange(nr) / nr
    z = np.linspace(-height / 2, height / 2, nz + 1)
    coords = [
        np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.full(nr, zz)]) for zz in z
    ]
    coords = np.concatenate(coords)
    idx = np.arange((nz + 1) * nr).reshape(nz + 1, nr)
    a, b = idx[:-1], np.roll(idx[:-1], -1, axis=1)
    c, d = np.roll(idx[1:], -1, axis=1), idx[1:]
    lateral = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([a, c, d], -1).reshape(-1, 3)])
    coords = [coords]
    tris = [lateral]
    nxt = len(coords[0])
    n_rings = max(1, int(round(nr / (2 * np.pi))))
    for zc, rim, sign in ((z[-1], idx[-1], 1.0), (z[0], idx[0], -1.0)):
        rings = [np.array([nxt])]
        ring_ang = [np.zeros(1)]
        pts = [[0.0, 0.0, zc]]
        nxt += 1
        for j in range(1, n_rings):
            m = max(6, int(round(nr * j / n_rings)))
            off = 0.5 * (j % 2) * 2 * np.pi / m
            th = off + 2 * np.pi * np.arange(m) / m
            rr = radius * j / n_rings
            pts += [[rr * np.cos(t), rr * np.sin(t), zc] for t in th]
            rings.append(nxt + np.arange(m))
            ring_ang.append(th)
            nxt += m
        rings.append(rim)
        ring_ang.append(ang)
        coords.append(np.array(pts))
        cap = []
        for j in range(1, len(rings)):
            if j == 1:
                o = rings[1]
                cap += [(rings[0][0], o[q], o[(q + 1) % len(o)]) for q in range(len(o))]
            else:
                cap += _zip_rings(rings[j - 1], ring_ang[j - 1], rings[j], ring_ang[j])
        cap = np.array(cap)
        if sign < 0:
            cap = cap[:, ::-1]
        tris.append(cap)
    coords = np.concatenate(coords)
    tris = np.concatenate(tris)
    tris = _orient_outward(coords, tris, _cylinder_outward(coords[tris].mean(axis=1), height))
    return Mesh.from_arrays(coords, tris)


def _cylinder_outward(p, height):
    out = np.column_stack([p[:, 0], p[:, 1], np.zeros(len(p))])
    cap = np.abs(np.abs(p[:, 2]) - height / 2) < 1e-12
    out[cap] = np.column_stack([np.zeros(cap.sum()), np.zeros(cap.sum()), np.sign(p[cap, 2])])
    return out


def refine_region(mesh: Mesh, predicate, levels: int = 1, project=None) -> Mesh:
    """Refine the triangles whose centers satisfy ``predicate`` 1-to-4.

    Neighbors are closed conformingly: a triangle with two or more split
    edges is refined 1-to-4 as well, one with a single split edge is bisected.
    New vertices are mapped through ``project`` (e.g. back to the sphere).
    """
    if mesh.arity != 3:
        raise ValueError("refine_region supports triangle meshes only")
    coords = np.array(mesh.vertex_coords)
    tris = np.array(mesh.elements)
    for _ in range(levels):
        coords, tris = _refine_once(coords, tris, predicate, project)
    return Mesh.from_arrays(coords, tris)


def _refine_once(coords, tris, predicate, project):
    red = np.asarray(predicate(coords[tris].mean(axis=1)), dtype=bool)
    e = np.sort(np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1), axis=2)
    edges, inv = np.unique(e.reshape(-1, 2), axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3)
    while True:
        split = np.zeros(len(edges), dtype=bool)
        split[inv[red].ravel()] = True
        nsplit = split[inv].sum(axis=1)
        grow = ~red & (nsplit >= 2)
        if not grow.any():
            break
        red |= grow
    mid_id = np.full(len(edges), -1)
    sel = np.flatnonzero(split)
    mid_id[sel] = len(coords) + np.arange(len(sel))
    mid = 0.5 * (coords[edges[sel, 0]] + coords[edges[sel, 1]])
    if project is not None and len(mid):
        mid = project(mid)
    coords = np.vstack([coords, mid])
    out = [tris[nsplit == 0]]
    r = tris[red]
    m = mid_id[inv[red]]
    a, b, c = r.T
    ab, bc, ca = m.T
    out += [np.column_stack(t) for t in ((a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca))]
    green = np.flatnonzero(~red & (nsplit == 1))
    for t in green:
        local = int(np.flatnonzero(split[inv[t]])[0])
        p, q, s = tris[t][local], tris[t][(local + 1) % 3], tris[t][(local + 2) % 3]
        mm = mid_id[inv[t, local]]
        out.append(np.array([[p, mm, s], [mm, q, s]]))
    return coords, np.concatenate(out)
