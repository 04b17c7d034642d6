"""Array-based half-facet surface meshes.

A :class:`Mesh` stores triangles or quadrilaterals in a connectivity table and
encodes adjacency through half-facets: local edge ``i`` of element ``e`` runs
from ``elements[e, i]`` to ``elements[e, (i + 1) % k]`` and has id ``e * k + i``.
``twin_halffacet`` holds the id of the opposite half-facet, or ``BOUNDARY``.

Virtual splitting sets the twins of feature edges to ``BOUNDARY``.  Every
neighborhood query then works on *nodes*: one node per (vertex, fan of
elements connected around it), so a vertex on a ridge owns one node per side
and stencils never cross a split.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

logger = logging.getLogger(__name__)

BOUNDARY = -1


class MeshError(ValueError):
    """Raised for malformed, non-manifold or unreadable meshes."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle or quadrilateral surface mesh with half-facet adjacency.

    Parameters
    ----------
    vertex_coords : (N, 3) float array
    elements : (M, k) int array, ``k`` in {3, 4}
    twin_halffacet : (M, k) int array
        Opposite half-facet id or ``BOUNDARY``.
    vertex_to_halffacet : (N,) int array
        One half-facet leaving each vertex (a boundary one when it exists),
        ``BOUNDARY`` for isolated vertices.
    patch_id : (M,) int array
        Edge-connected component label of every element.

    Use :meth:`from_arrays` to build the adjacency from a plain face list.
    """

    vertex_coords: np.ndarray
    elements: np.ndarray
    twin_halffacet: np.ndarray
    vertex_to_halffacet: np.ndarray
    patch_id: np.ndarray

    @classmethod
    def from_arrays(cls, vertex_coords, elements) -> "Mesh":
        coords = np.asarray(vertex_coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] not in (2, 3):
            raise MeshError("vertex coordinates must have shape (N, 2) or (N, 3)")
        if coords.shape[1] == 2:
            coords = np.column_stack([coords, np.zeros(len(coords))])
        elems = np.asarray(elements, dtype=np.int64)
        if elems.size == 0:
            elems = elems.reshape(0, 3)
        if elems.ndim != 2 or elems.shape[1] not in (3, 4):
            raise MeshError("elements must be triangles or quadrilaterals of a single arity")
        n = len(coords)
        if elems.size and (elems.min() < 0 or elems.max() >= n):
            raise MeshError("element vertex index out of range [0, %d)" % n)
        srt = np.sort(elems, axis=1)
        bad = np.nonzero((srt[:, 1:] == srt[:, :-1]).any(axis=1))[0]
        if len(bad):
            raise MeshError("degenerate element %d has a repeated vertex" % bad[0])
        coords.setflags(write=False)
        elems.setflags(write=False)
        twin = _build_twins(elems, n)
        return cls._assemble(coords, elems, twin)

    @classmethod
    def _assemble(cls, coords, elems, twin) -> "Mesh":
        twin.setflags(write=False)
        v2hf = _vertex_to_halffacet(elems, twin, len(coords))
        patch = _patch_labels(elems, twin)
        v2hf.setflags(write=False)
        patch.setflags(write=False)
        return cls(coords, elems, twin, v2hf, patch)

    # -- sizes ---------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_coords)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @property
    def arity(self) -> int:
        return self.elements.shape[1]

    @property
    def n_patches(self) -> int:
        return int(self.patch_id.max()) + 1 if self.n_elements else 0

    # -- half-facets ---------------------------------------------------------

    def halffacet_vertices(self, hf):
        """Return the (origin, destination) vertices of half-facet ids ``hf``."""
        hf = np.asarray(hf)
        k = self.arity
        e, i = np.divmod(hf, k)
        return self.elements[e, i], self.elements[e, (i + 1) % k]

    @cached_property
    def boundary_halffacets(self) -> np.ndarray:
        return np.flatnonzero(self.twin_halffacet.ravel() == BOUNDARY)

    def check_invariants(self) -> None:
        """Full scan of the half-facet invariants; raises ``MeshError``."""
        t = self.twin_halffacet.ravel()
        inner = np.flatnonzero(t != BOUNDARY)
        if len(inner) and not np.array_equal(t[t[inner]], inner):
            raise MeshError("twin relation is not an involution")
        a, b = self.halffacet_vertices(inner)
        ta, tb = self.halffacet_vertices(t[inner])
        same = ((a == ta) & (b == tb)) | ((a == tb) & (b == ta))
        if not same.all():
            raise MeshError("twin half-facets do not share their edge")

    # -- edges and geometry --------------------------------------------------

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected vertex edges, shape (E, 2), sorted."""
        a = self.elements.ravel()
        b = np.roll(self.elements, -1, axis=1).ravel()
        e = np.sort(np.column_stack([a, b]), axis=1)
        return np.unique(e, axis=0) if len(e) else e.reshape(0, 2)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """Arithmetic mean of each element's vertices (not the quad centroid)."""
        return self.vertex_coords[self.elements].mean(axis=1)

    @cached_property
    def element_areas(self) -> np.ndarray:
        x = self.vertex_coords[self.elements]
        area = 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)
        if self.arity == 4:
            # second half of the split along diagonal 0-2
            area = area + 0.5 * np.linalg.norm(
                np.cross(x[:, 2] - x[:, 0], x[:, 3] - x[:, 0]), axis=1
            )
        nzero = int(np.count_nonzero(area == 0))
        if nzero:
            logger.warning("%d zero-area elements", nzero)
        return area

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Area-scaled face normals (Newell's formula, exact for planar polygons)."""
        x = self.vertex_coords[self.elements]
        x = x - x[:, :1]
        y = np.roll(x, -1, axis=1)
        return 0.5 * np.cross(x, y).sum(axis=1)

    @cached_property
    def unit_face_normals(self) -> np.ndarray:
        n = self.face_normals
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    @cached_property
    def global_edge_length(self) -> float:
        e = self.edges
        if len(e) == 0:
            return 0.0
        d = self.vertex_coords[e[:, 1]] - self.vertex_coords[e[:, 0]]
        return float(np.linalg.norm(d, axis=1).mean())

    @cached_property
    def fingerprint(self) -> bytes:
        """64-bit digest of coordinates, connectivity and twins."""
        h = hashlib.blake2b(digest_size=8)
        h.update(np.ascontiguousarray(self.vertex_coords, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.elements, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.twin_halffacet, dtype="<i8").tobytes())
        return h.digest()

    # -- nodes (vertex copies separated by splits) ---------------------------

    @cached_property
    def _node_layout(self):
        return _node_layout(self.elements, self.twin_halffacet, self.n_vertices)

    @property
    def elem_nodes(self) -> np.ndarray:
        """(M, k) node id of every element corner."""
        return self._node_layout[0]

    @property
    def node_vertex(self) -> np.ndarray:
        """Vertex index of every node."""
        return self._node_layout[1]

    @property
    def n_nodes(self) -> int:
        return len(self.node_vertex)

    @cached_property
    def node_is_boundary(self) -> np.ndarray:
        k = self.arity
        bd = self.twin_halffacet == BOUNDARY
        corner_bd = bd | np.roll(bd, 1, axis=1)
        out = np.zeros(self.n_nodes, dtype=bool)
        np.logical_or.at(out, self.elem_nodes.ravel(), corner_bd.ravel())
        return out

    @cached_property
    def node_normals(self) -> np.ndarray:
        """Area-weighted mean of incident face normals, per node."""
        fn = self.face_normals
        out = np.zeros((self.n_nodes, 3))
        for i in range(self.arity):
            np.add.at(out, self.elem_nodes[:, i], fn)
        return out

    @cached_property
    def node_elements(self) -> sparse.csr_matrix:
        """Node-by-element incidence (0/1 CSR)."""
        M, k = self.elements.shape
        rows = self.elem_nodes.ravel()
        cols = np.repeat(np.arange(M), k)
        B = sparse.csr_matrix(
            (np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(self.n_nodes, M)
        )
        B.sum_duplicates()
        return B

    @cached_property
    def _elem_node_t(self) -> sparse.csr_matrix:
        return self.node_elements.T.tocsr()

    @cached_property
    def element_adjacency(self) -> sparse.csr_matrix:
        """Element-by-element adjacency across non-boundary half-facets."""
        M, k = self.elements.shape
        t = self.twin_halffacet.ravel()
        hf = np.flatnonzero(t != BOUNDARY)
        rows = hf // k
        cols = t[hf] // k
        return sparse.csr_matrix(
            (np.ones(len(rows), dtype=np.int32), (rows, cols)), shape=(M, M)
        )

    def vertex_nodes(self, v: int) -> np.ndarray:
        """All node ids that are copies of vertex ``v``."""
        return np.flatnonzero(self.node_vertex == v)

    def node_of(self, v: int, patch: int | None = None) -> int:
        """Node of vertex ``v``; the copy inside ``patch`` when given."""
        nodes = self.vertex_nodes(v)
        if len(nodes) == 0:
            raise MeshError("vertex %d is isolated" % v)
        if patch is None:
            return int(nodes[0])
        for n in nodes:
            elems = self.node_elements.indices[
                self.node_elements.indptr[n] : self.node_elements.indptr[n + 1]
            ]
            if (self.patch_id[elems] == patch).any():
                return int(n)
        raise MeshError("vertex %d does not touch patch %d" % (v, patch))

    # -- rings ---------------------------------------------------------------

    def ring_elements(self, nodes, k: float) -> sparse.csr_matrix:
        """Element sets of the ``k``-rings of ``nodes`` (rows follow ``nodes``).

        Integer ``k``: elements incident to the (k-1)-ring. Half-integer
        ``k``: the floor(k)-ring elements plus their edge neighbors.
        """
        k2 = _check_ring(k)
        nodes = np.asarray(nodes, dtype=np.int64)
        B, Bt = self.node_elements, self._elem_node_t
        R = B[nodes]
        for _ in range(k2 // 2 - 1):
            R = _binary(_binary(R @ Bt) @ B)
        if k2 % 2:
            R = _binary(R + R @ self.element_adjacency)
        return R

    def ring_nodes(self, nodes, k: float) -> sparse.csr_matrix:
        """Node sets of the ``k``-rings of ``nodes`` as a boolean CSR matrix."""
        V = _binary(self.ring_elements(nodes, k) @ self._elem_node_t)
        V.sort_indices()
        return V

    def node_ring(self, node: int, k: float) -> np.ndarray:
        """Anchor-first node ids of the ``k``-ring of a single node."""
        V = self.ring_nodes([node], k)
        ids = V.indices
        if len(ids) == 0:
            raise MeshError("node %d has an empty ring" % node)
        return np.concatenate([[node], ids[ids != node]])


def _binary(A) -> sparse.csr_matrix:
    A = A.tocsr()
    A.data[:] = 1
    return A


def _check_ring(k: float) -> int:
    k2 = int(round(2 * k))
    if k2 < 2 or abs(2 * k - k2) > 1e-12:
        raise ValueError("ring size must be a positive multiple of 0.5, at least 1; got %r" % k)
    return k2


def k_ring(mesh: Mesh, v: int, k: float, patch: int | None = None) -> np.ndarray:
    """Vertex indices of the ``k``-ring of vertex ``v``, anchor first.

    The 1-ring holds the vertices sharing an element with ``v``; a ``k.5``-ring
    adds the vertices of elements edge-adjacent to the ``k``-ring elements.
    Rings never cross boundary half-facets, so after :func:`virtual_split`
    they stay on one side of every feature curve.  For a vertex on a split,
    ``patch`` selects the side (default: the first copy).
    """
    node = mesh.node_of(v, patch)
    return mesh.node_vertex[mesh.node_ring(node, k)]


def cell_center(mesh: Mesh, sigma: int) -> np.ndarray:
    return mesh.cell_centers[sigma]


def element_area(mesh: Mesh, sigma: int) -> float:
    return float(mesh.element_areas[sigma])


# -- construction helpers ----------------------------------------------------


def _build_twins(elems: np.ndarray, n_vertices: int) -> np.ndarray:
    M, k = elems.shape
    twin = np.full(M * k, BOUNDARY, dtype=np.int64)
    if M == 0:
        return twin.reshape(M, k)
    a = elems.ravel()
    b = np.roll(elems, -1, axis=1).ravel()
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo * np.int64(n_vertices) + hi
    order = np.argsort(key, kind="stable")
    ks = key[order]
    starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
    counts = np.diff(np.r_[starts, len(ks)])
    if (counts > 2).any():
        s = starts[np.argmax(counts > 2)]
        h = order[s]
        raise MeshError(
            "non-manifold edge (%d, %d) shared by %d elements"
            % (lo[h], hi[h], counts[counts > 2][0])
        )
    pair = starts[counts == 2]
    h0, h1 = order[pair], order[pair + 1]
    twin[h0] = h1
    twin[h1] = h0
    return twin.reshape(M, k)


def _vertex_to_halffacet(elems, twin, n_vertices) -> np.ndarray:
    M, k = elems.shape
    out = np.full(n_vertices, BOUNDARY, dtype=np.int64)
    hf = np.arange(M * k)
    origin = elems.ravel()
    # interior half-facets first, boundary ones overwrite so they win
    bd = twin.ravel() == BOUNDARY
    out[origin[~bd]] = hf[~bd]
    out[origin[bd]] = hf[bd]
    return out


def _patch_labels(elems, twin) -> np.ndarray:
    M, k = elems.shape
    if M == 0:
        return np.zeros(0, dtype=np.int64)
    t = twin.ravel()
    hf = np.flatnonzero(t != BOUNDARY)
    g = sparse.csr_matrix((np.ones(len(hf)), (hf // k, t[hf] // k)), shape=(M, M))
    _, labels = csgraph.connected_components(g, directed=False)
    # relabel by first element so ids are stable
    _, first = np.unique(labels, return_index=True)
    rank = np.empty(len(first), dtype=np.int64)
    rank[np.argsort(first)] = np.arange(len(first))
    return rank[labels]


def _node_layout(elems, twin, n_vertices):
    """Group element corners into nodes: corners of one vertex joined by twins."""
    M, k = elems.shape
    C = M * k
    if C == 0:
        return np.zeros((0, k), dtype=np.int64), np.zeros(0, dtype=np.int64)
    t = twin.ravel()
    hf = np.flatnonzero((t != BOUNDARY) & (np.arange(C) < t))
    e, i = np.divmod(hf, k)
    e2 = t[hf] // k
    a = elems[e, i]
    b = elems[e, (i + 1) % k]
    ia = np.argmax(elems[e2] == a[:, None], axis=1)
    ib = np.argmax(elems[e2] == b[:, None], axis=1)
    rows = np.r_[e * k + i, e * k + (i + 1) % k]
    cols = np.r_[e2 * k + ia, e2 * k + ib]
    g = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(C, C))
    _, labels = csgraph.connected_components(g, directed=False)
    corner_vertex = elems.ravel()
    first = np.full(labels.max() + 1, C, dtype=np.int64)
    np.minimum.at(first, labels, np.arange(C))
    comp_vertex = corner_vertex[first]
    order = np.lexsort((first, comp_vertex))
    rank = np.empty(len(order), dtype=np.int64)
    rank[order] = np.arange(len(order))
    elem_nodes = rank[labels].reshape(M, k)
    node_vertex = comp_vertex[order]
    elem_nodes.setflags(write=False)
    node_vertex.setflags(write=False)
    return elem_nodes, node_vertex


# -- features and virtual splitting ------------------------------------------


@dataclass(frozen=True, eq=False)
class FeatureEdgeSet:
    """Sharp-ridge half-facets as (element, local edge) rows, both sides listed."""

    halffacets: np.ndarray
    corners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.halffacets)

    def ids(self, arity: int) -> np.ndarray:
        h = np.asarray(self.halffacets, dtype=np.int64).reshape(-1, 2)
        return h[:, 0] * arity + h[:, 1]


def detect_features(mesh: Mesh, dihedral_threshold: float = np.deg2rad(30.0)) -> FeatureEdgeSet:
    """Mark interior edges whose incident face normals differ by more than
    ``dihedral_threshold`` radians.

    Corner vertices are those touching three or more feature edges, ending a
    feature curve, or where the curve turns by more than the threshold.
    """
    k = mesh.arity
    t = mesh.twin_halffacet.ravel()
    hf = np.flatnonzero(t != BOUNDARY)
    n = mesh.unit_face_normals
    cosang = np.einsum("ij,ij->i", n[hf // k], n[t[hf] // k])
    feat = np.sort(hf[cosang < np.cos(dihedral_threshold)])
    rows = np.column_stack(np.divmod(feat, k))
    corners = _feature_corners(mesh, feat, dihedral_threshold)
    return FeatureEdgeSet(rows, corners)


def _feature_corners(mesh, feat, threshold):
    if len(feat) == 0:
        return np.zeros(0, dtype=np.int64)
    a, b = mesh.halffacet_vertices(feat)
    edges = np.unique(np.sort(np.column_stack([a, b]), axis=1), axis=0)
    val = np.bincount(edges.ravel(), minlength=mesh.n_vertices)
    corner = (val >= 3) | (val == 1)
    two = np.flatnonzero(val == 2)
    if len(two):
        # direction of the two feature edges at each valence-2 vertex
        X = mesh.vertex_coords
        inc = {}
        for p, q in edges:
            inc.setdefault(p, []).append(q)
            inc.setdefault(q, []).append(p)
        for v in two:
            p, q = inc[v]
            d1 = X[v] - X[p]
            d2 = X[q] - X[v]
            c = d1 @ d2 / (np.linalg.norm(d1) * np.linalg.norm(d2))
            if c < np.cos(threshold):
                corner[v] = True
    return np.flatnonzero(corner)


def virtual_split(mesh: Mesh, features: FeatureEdgeSet) -> Mesh:
    """Disconnect the twins of every feature half-facet.

    Coordinates and the element table are shared with ``mesh``; only the twin
    table, the vertex anchors and the patch labels change.
    """
    k = mesh.arity
    ids = features.ids(k)
    if len(ids) and (ids.min() < 0 or ids.max() >= mesh.n_elements * k):
        raise MeshError("feature half-facet out of range")
    twin = mesh.twin_halffacet.ravel().copy()
    other = twin[ids]
    twin[ids] = BOUNDARY
    twin[other[other != BOUNDARY]] = BOUNDARY
    return Mesh._assemble(mesh.vertex_coords, mesh.elements, twin.reshape(mesh.elements.shape))


# -- file I/O ----------------------------------------------------------------


def load_mesh(path, format: str | None = None) -> Mesh:
    """Read an OFF or OBJ indexed face set (vertices and faces only)."""
    path = Path(path)
    fmt = (format or path.suffix.lstrip(".")).upper()
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshError("cannot read %s: %s" % (path, exc)) from exc
    if fmt == "OFF":
        coords, faces = _parse_off(text)
    elif fmt == "OBJ":
        coords, faces = _parse_obj(text)
    else:
        raise MeshError("unsupported mesh format %r" % fmt)
    arity = {len(f) for f in faces}
    if len(arity) > 1:
        raise MeshError("mixed polygon arity %s is not supported" % sorted(arity))
    if arity and arity.pop() not in (3, 4):
        raise MeshError("only triangles and quadrilaterals are supported")
    return Mesh.from_arrays(coords, np.array(faces, dtype=np.int64).reshape(len(faces), -1))


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line.split()


def _parse_off(text):
    lines = _tokens(text)
    try:
        head = next(lines)
        if head[0].upper() != "OFF":
            raise MeshError("missing OFF header")
        counts = head[1:] or next(lines)
        nv, nf = int(counts[0]), int(counts[1])
        coords = [[float(x) for x in next(lines)[:3]] for _ in range(nv)]
        faces = []
        for _ in range(nf):
            row = next(lines)
            m = int(row[0])
            faces.append([int(x) for x in row[1 : 1 + m]])
            if len(faces[-1]) != m:
                raise MeshError("truncated face record")
    except (StopIteration, ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError("OFF parse failure: %s" % exc) from exc
    return np.array(coords, dtype=float).reshape(-1, 3), faces


def _parse_obj(text):
    coords, faces = [], []
    try:
        for tok in _tokens(text):
            if tok[0] == "v":
                coords.append([float(x) for x in tok[1:4]])
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                faces.append([i - 1 if i > 0 else len(coords) + i for i in idx])
    except ValueError as exc:
        raise MeshError("OBJ parse failure: %s" % exc) from exc
    return np.array(coords, dtype=float).reshape(-1, 3), faces


def write_off(mesh: Mesh, path) -> None:
    path = Path(path)
    lines = ["OFF", "%d %d 0" % (mesh.n_vertices, mesh.n_elements)]
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in mesh.vertex_coords]
    k = mesh.arity
    lines += [" ".join([str(k)] + [str(i) for i in e]) for e in mesh.elements]
    _atomic_write_text(path, "\n".join(lines) + "\n")


def write_patch_csv(mesh: Mesh, path) -> None:
    rows = ["element_id,patch_id"] + ["%d,%d" % (e, p) for e, p in enumerate(mesh.patch_id)]
    _atomic_write_text(Path(path), "\n".join(rows) + "\n")


def write_features_csv(features: FeatureEdgeSet, path) -> None:
    rows = ["element_id,edge_local_id"] + ["%d,%d" % (e, i) for e, i in features.halffacets]
    _atomic_write_text(Path(path), "\n".join(rows) + "\n")


def read_features_csv(path) -> FeatureEdgeSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
    return FeatureEdgeSet(data.reshape(-1, 2))


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)
