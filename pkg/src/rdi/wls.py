"""Weighted least-squares fitting in local tangent-plane coordinates.

Each node gets a local frame (origin at the node, normal from the incident
faces, two tangent vectors).  Stencil points are projected onto the tangent
plane and a degree-``p`` polynomial in the projected ``(u, v)`` coordinates is
fitted with compactly supported radial weights.  The fit is linear in the
nodal values, so the solver keeps the full coefficient operator ``X`` with
``coeffs = X @ f[stencil]``; the OSUS operator is assembled from these rows.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, MeshError

logger = logging.getLogger(__name__)

COND_MAX = 1e4
RING_CAP = 3.5
INTERIOR_RING = 1.5
BOUNDARY_RING = 3.0
SUPPORT_FACTOR = 1.1


def n_coeffs(degree: int) -> int:
    return (degree + 1) * (degree + 2) // 2


def monomial_exponents(degree: int) -> np.ndarray:
    """Exponent pairs in graded lexicographic order: 1, u, v, u^2, uv, v^2, ..."""
    return np.array([(d - j, j) for d in range(degree + 1) for j in range(d + 1)])


def monomials(uv, degree: int) -> np.ndarray:
    """Monomials of the last axis of ``uv`` (shape (..., 2)) -> (..., n_coeffs)."""
    uv = np.asarray(uv, dtype=float)
    u, v = uv[..., 0], uv[..., 1]
    upow = [np.ones_like(u)]
    vpow = [np.ones_like(v)]
    for _ in range(degree):
        upow.append(upow[-1] * u)
        vpow.append(vpow[-1] * v)
    return np.stack([upow[a] * vpow[b] for a, b in monomial_exponents(degree)], axis=-1)


def vandermonde(uv, degree: int, h: float | None = None) -> np.ndarray:
    """Generalized Vandermonde matrix of ``uv / h``.

    ``h`` defaults to the largest distance of a point from the origin, which
    keeps every entry within [-1, 1].
    """
    uv = np.asarray(uv, dtype=float)
    if h is None:
        r = np.linalg.norm(uv, axis=-1)
        h = r.max() if r.size and r.max() > 0 else 1.0
    return monomials(uv / h, degree)


def radial_profile(t):
    """C2 compactly supported profile (1 - t)^4 (4t + 1) on [0, 1], 0 beyond."""
    t = np.asarray(t, dtype=float)
    s = np.clip(1.0 - t, 0.0, None)
    return s**4 * (4.0 * t + 1.0)


def radial_weights(uv, rho: float | None = None) -> np.ndarray:
    """Row weights ``phi(r / rho)`` for points at distance ``r`` from the origin."""
    r = np.linalg.norm(np.asarray(uv, dtype=float), axis=-1)
    if rho is None:
        rho = SUPPORT_FACTOR * r.max()
    if not rho > 0:
        raise ValueError("support radius must be positive; increase rho")
    w = radial_profile(r / rho)
    if not (w > 0).any():
        raise ValueError("all weights vanish for rho=%g; increase the support radius" % rho)
    return w


def tangent_basis(normal) -> np.ndarray:
    """Orthonormal tangent vectors (..., 2, 3) completing unit ``normal``.

    The first tangent is the coordinate axis least aligned with the normal,
    projected onto the tangent plane; the second is ``normal x t1``.
    """
    n = np.asarray(normal, dtype=float)
    axis = np.argmin(np.abs(n), axis=-1)
    e = np.zeros_like(n)
    np.put_along_axis(e, axis[..., None], 1.0, axis=-1)
    t1 = e - np.sum(e * n, axis=-1, keepdims=True) * n
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=-2)


@dataclass
class LocalFrame:
    """Tangent-plane frame of one node and the projected stencil."""

    origin: np.ndarray
    normal: np.ndarray
    basis: np.ndarray
    uv: np.ndarray
    stencil: np.ndarray

    def project(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.origin) @ self.basis.T


@dataclass
class FitBatch:
    """Fits for a batch of nodes sharing a padded stencil width.

    ``X[b]`` maps the stencil values ``f[stencil[b]]`` (padding entries are
    multiplied by zero) to polynomial coefficients in the scaled variables
    ``(u / h[b], v / h[b])``.
    """

    nodes: np.ndarray
    ring: float
    stencil: np.ndarray
    mask: np.ndarray
    origin: np.ndarray
    normal: np.ndarray
    basis: np.ndarray
    h: np.ndarray
    cond: np.ndarray
    X: np.ndarray
    degree: int

    def __len__(self):
        return len(self.nodes)

    def eval_rows(self, rows, points) -> np.ndarray:
        """Weights over ``stencil[rows]`` that evaluate the fits at ``points``."""
        d = points - self.origin[rows]
        uv = np.einsum("bj,bij->bi", d, self.basis[rows])
        m = monomials(uv / self.h[rows, None], self.degree)
        return np.einsum("bc,bcl->bl", m, self.X[rows])


def node_normals(mesh: Mesh, nodes) -> np.ndarray:
    n = mesh.node_normals[nodes]
    norm = np.linalg.norm(n, axis=1)
    bad = np.flatnonzero(~(norm > 0))
    if len(bad):
        v = mesh.node_vertex[np.asarray(nodes)[bad[0]]]
        raise MeshError("vanishing mean normal at vertex %d (fold-over?)" % v)
    return n / norm[:, None]


def padded_stencils(mesh: Mesh, nodes, ring: float):
    """Anchor-first padded stencil ids (``-1`` padding) and their mask."""
    nodes = np.asarray(nodes, dtype=np.int64)
    V = mesh.ring_nodes(nodes, ring)
    lengths = np.diff(V.indptr)
    L = int(lengths.max()) if len(lengths) else 1
    ids = np.full((len(nodes), L), -1, dtype=np.int64)
    row = np.repeat(np.arange(len(nodes)), lengths)
    col = np.arange(V.nnz) - np.repeat(V.indptr[:-1], lengths)
    ids[row, col] = V.indices
    pos = np.argmax(ids == nodes[:, None], axis=1)
    r = np.arange(len(nodes))
    ids[r, pos] = ids[r, 0]
    ids[:, 0] = nodes
    return ids, ids >= 0


def fit_batch(mesh: Mesh, nodes, ring: float, degree: int = 2) -> FitBatch:
    """Weighted least-squares fit operators for ``nodes`` with ``ring``-stencils."""
    nodes = np.asarray(nodes, dtype=np.int64)
    ids, mask = padded_stencils(mesh, nodes, ring)
    X3 = mesh.vertex_coords[mesh.node_vertex[np.where(mask, ids, 0)]]
    normal = node_normals(mesh, nodes)
    basis = tangent_basis(normal)
    origin = X3[:, 0]
    uv = np.einsum("blj,bij->bli", X3 - origin[:, None], basis)
    uv[~mask] = 0.0
    r = np.linalg.norm(uv, axis=-1)
    rmax = r.max(axis=1)
    h = np.where(rmax > 0, rmax, 1.0)
    w = radial_profile(r / (SUPPORT_FACTOR * h[:, None])) * mask
    A = monomials(uv / h[:, None, None], degree)
    WA = w[..., None] * A
    colnorm = np.linalg.norm(WA, axis=1)
    colnorm = np.where(colnorm > 0, colnorm, 1.0)
    S = WA / colnorm[:, None, :]
    U, s, Vt = np.linalg.svd(S, full_matrices=False)
    nc = n_coeffs(degree)
    if s.shape[1] < nc:
        s = np.pad(s, ((0, 0), (0, nc - s.shape[1])))
    with np.errstate(divide="ignore"):
        cond = np.where(s[:, -1] > 0, s[:, 0] / s[:, -1], np.inf)
    k = min(U.shape[2], Vt.shape[1])
    sk = s[:, :k]
    sinv = np.where(sk > 1e-13 * sk[:, :1], 1.0 / np.where(sk > 0, sk, 1.0), 0.0)
    # X = D^-1 V S^-1 U^T W
    X = np.einsum("bkc,bk,blk->bcl", Vt[:, :k], sinv, U[:, :, :k])
    X = X * w[:, None, :] / colnorm[:, :, None]
    return FitBatch(nodes, ring, ids, mask, origin, normal, basis, h, cond, X, degree)


@dataclass
class NodeFits:
    """Fits for every node of a mesh, grouped into batches by final ring size."""

    batches: list
    batch_of: np.ndarray
    row_of: np.ndarray
    ring: np.ndarray
    cond: np.ndarray
    flagged: np.ndarray
    degree: int

    def batch_rows(self, nodes):
        """Yield ``(batch, positions, rows)`` covering ``nodes``."""
        nodes = np.asarray(nodes)
        b = self.batch_of[nodes]
        for i, batch in enumerate(self.batches):
            pos = np.flatnonzero(b == i)
            if len(pos):
                yield batch, pos, self.row_of[nodes[pos]]


def default_rings(mesh: Mesh, interior=INTERIOR_RING, boundary=BOUNDARY_RING) -> np.ndarray:
    return np.where(mesh.node_is_boundary, boundary, interior)


def fit_all_nodes(
    mesh: Mesh,
    degree: int = 2,
    interior_ring: float = INTERIOR_RING,
    boundary_ring: float = BOUNDARY_RING,
    cond_max: float = COND_MAX,
    ring_cap: float = RING_CAP,
) -> NodeFits:
    """Fit every node, enlarging the stencil by half a ring while the scaled
    Vandermonde condition number exceeds ``cond_max`` (up to ``ring_cap``)."""
    n = mesh.n_nodes
    ring = default_rings(mesh, interior_ring, boundary_ring).astype(float)
    batch_of = np.full(n, -1, dtype=np.int64)
    row_of = np.full(n, -1, dtype=np.int64)
    cond = np.full(n, np.inf)
    flagged = np.zeros(n, dtype=bool)
    batches = []
    todo = np.arange(n)
    while len(todo):
        retry = []
        for r in np.unique(ring[todo]):
            nodes = todo[ring[todo] == r]
            batch = fit_batch(mesh, nodes, float(r), degree)
            bad = batch.cond > cond_max
            grow = bad & (r + 0.5 <= ring_cap + 1e-12)
            keep = ~grow
            if keep.any():
                kept = _take(batch, keep)
                batch_of[kept.nodes] = len(batches)
                row_of[kept.nodes] = np.arange(len(kept))
                cond[kept.nodes] = kept.cond
                flagged[kept.nodes] = kept.cond > cond_max
                batches.append(kept)
            ring[nodes[grow]] += 0.5
            retry.append(nodes[grow])
        todo = np.concatenate(retry) if retry else np.zeros(0, dtype=np.int64)
    if flagged.any():
        logger.warning("%d fits remain ill-conditioned at ring cap %g", flagged.sum(), ring_cap)
    return NodeFits(batches, batch_of, row_of, ring, cond, flagged, degree)


def _take(batch: FitBatch, sel) -> FitBatch:
    return FitBatch(
        batch.nodes[sel], batch.ring, batch.stencil[sel], batch.mask[sel], batch.origin[sel],
        batch.normal[sel], batch.basis[sel], batch.h[sel], batch.cond[sel], batch.X[sel],
        batch.degree,
    )


def local_edge_lengths(mesh: Mesh, fits: NodeFits, mode: str = "stencil") -> np.ndarray:
    """Per-node mean edge length measured in the node's tangent plane.

    ``mode='stencil'`` averages over edges with both ends in the WLS stencil,
    ``mode='one_ring'`` over the edges incident to the node.
    """
    from scipy import sparse

    en = np.sort(
        np.column_stack([mesh.elem_nodes.ravel(), np.roll(mesh.elem_nodes, -1, axis=1).ravel()]),
        axis=1,
    )
    en = np.unique(en, axis=0)
    E = len(en)
    inc = sparse.csr_matrix(
        (np.ones(2 * E), (en.ravel(), np.repeat(np.arange(E), 2))), shape=(mesh.n_nodes, E)
    )
    X = mesh.vertex_coords[mesh.node_vertex]
    d = X[en[:, 1]] - X[en[:, 0]]
    out = np.zeros(mesh.n_nodes)
    for batch in fits.batches:
        if mode == "stencil":
            B = len(batch)
            rows = np.repeat(np.arange(B), batch.mask.sum(axis=1))
            mem = sparse.csr_matrix(
                (np.ones(len(rows)), (rows, batch.stencil[batch.mask])), shape=(B, mesh.n_nodes)
            )
            C = (mem @ inc).tocoo()
            keep = C.data == 2
            r, e = C.row[keep], C.col[keep]
        elif mode == "one_ring":
            C = inc[batch.nodes].tocoo()
            r, e = C.row, C.col
        else:
            raise ValueError("unknown local length mode %r" % mode)
        de = d[e]
        dn = np.einsum("ij,ij->i", de, batch.normal[r])
        length = np.sqrt(np.maximum(np.einsum("ij,ij->i", de, de) - dn * dn, 0.0))
        tot = np.bincount(r, weights=length, minlength=len(batch))
        cnt = np.bincount(r, minlength=len(batch))
        out[batch.nodes] = tot / np.maximum(cnt, 1)
    return out


def length_scales(mesh: Mesh, mode: str = "stencil", fits: NodeFits | None = None):
    """Global mean edge length and per-vertex tangent-plane edge lengths.

    Returns ``(h_g, h_l)`` with ``h_l`` per vertex; a vertex with several
    copies on a split mesh gets the mean over its copies.
    """
    if fits is None:
        fits = fit_all_nodes(mesh)
    node_h = local_edge_lengths(mesh, fits, mode)
    tot = np.bincount(mesh.node_vertex, weights=node_h, minlength=mesh.n_vertices)
    cnt = np.bincount(mesh.node_vertex, minlength=mesh.n_vertices)
    return float(mesh.global_edge_length), tot / np.maximum(cnt, 1)


# -- single-vertex API ---------------------------------------------------------


def local_frame(mesh: Mesh, v: int, ring: float | None = None, patch: int | None = None) -> LocalFrame:
    """Tangent-plane frame at vertex ``v`` with its projected stencil."""
    node = mesh.node_of(v, patch)
    if ring is None:
        ring = BOUNDARY_RING if mesh.node_is_boundary[node] else INTERIOR_RING
    stencil = mesh.node_ring(node, ring)
    normal = node_normals(mesh, [node])[0]
    basis = tangent_basis(normal)
    origin = mesh.vertex_coords[v]
    uv = (mesh.vertex_coords[mesh.node_vertex[stencil]] - origin) @ basis.T
    return LocalFrame(origin, normal, basis, uv, mesh.node_vertex[stencil])


@dataclass
class WlsFit:
    """Local polynomial at one vertex.

    ``coefficients`` multiply the monomials of the unscaled tangent-plane
    coordinates ``(u, v)`` in graded lexicographic order.
    """

    degree: int
    coefficients: np.ndarray
    cond: float
    stencil: np.ndarray
    frame: LocalFrame
    ring: float
    flagged: bool = False

    def __call__(self, points) -> np.ndarray:
        uv = self.frame.project(points)
        return monomials(uv, self.degree) @ self.coefficients


def wls_fit(
    mesh: Mesh,
    v: int,
    values,
    degree: int = 2,
    ring: float | None = None,
    patch: int | None = None,
    cond_max: float = COND_MAX,
    ring_cap: float = RING_CAP,
) -> WlsFit:
    """Fit a degree-``degree`` polynomial to ``values`` around vertex ``v``.

    The stencil starts at ``ring`` (1.5 inside a patch, 3 on its boundary) and
    grows by half a ring while the condition estimate exceeds ``cond_max``.
    """
    node = mesh.node_of(v, patch)
    if ring is None:
        ring = BOUNDARY_RING if mesh.node_is_boundary[node] else INTERIOR_RING
    values = np.asarray(values, dtype=float)
    while True:
        batch = fit_batch(mesh, [node], ring, degree)
        if batch.cond[0] <= cond_max or ring + 0.5 > ring_cap + 1e-12:
            break
        ring += 0.5
    flagged = bool(batch.cond[0] > cond_max)
    if flagged:
        logger.warning("fit at vertex %d ill-conditioned (cond %.3g)", v, batch.cond[0])
    ids = batch.stencil[0][batch.mask[0]]
    coeff_h = batch.X[0][:, batch.mask[0]] @ values[mesh.node_vertex[ids]]
    deg = monomial_exponents(degree).sum(axis=1)
    coeff = coeff_h / batch.h[0] ** deg
    frame = LocalFrame(
        batch.origin[0], batch.normal[0], batch.basis[0],
        (mesh.vertex_coords[mesh.node_vertex[ids]] - batch.origin[0]) @ batch.basis[0].T,
        mesh.node_vertex[ids],
    )
    return WlsFit(degree, coeff, float(batch.cond[0]), mesh.node_vertex[ids], frame, ring, flagged)


def walf_eval(mesh: Mesh, sigma: int, fits, xi) -> float:
    """Weighted average of the vertex fits of element ``sigma`` at the point
    with natural coordinates ``xi``.

    ``fits`` maps vertex index to :class:`WlsFit` (dict or sequence).
    """
    xi = np.asarray(xi, dtype=float)
    verts = mesh.elements[sigma]
    if len(xi) != len(verts):
        raise ValueError("need one natural coordinate per element vertex")
    p = xi @ mesh.vertex_coords[verts]
    total = 0.0
    for x, v in zip(xi, verts):
        try:
            fit = fits[v]
        except (KeyError, IndexError):
            fit = None
        if fit is None:
            raise KeyError("missing fit for vertex %d" % v)
        total += x * float(fit(p[None, :])[0])
    return total


def center_weights(arity: int) -> np.ndarray:
    """Natural coordinates of the cell center: 1/3 each (triangle), 1/4 (quad)."""
    return np.full(arity, 1.0 / arity)
