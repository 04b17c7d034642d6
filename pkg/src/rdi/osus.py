"""Overshoot-undershoot (OSUS) operator.

Row ``sigma`` of the operator evaluates, at the cell center, the quadratic
WALF reconstruction minus the linear (bilinear for quads) interpolant.  Both
are linear in the nodal values, so one sparse product gives every cell's
indicator ``alpha``.  The operator depends only on the mesh and is built once.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from . import wls
from .mesh import Mesh

logger = logging.getLogger(__name__)

MAGIC = b"OSUS"
VERSION = 1
_HEADER = struct.Struct("<4sIQQQ8s")
_TRAILER = struct.Struct("<ddd")


class OperatorError(ValueError):
    """Operator/mesh mismatch or unreadable operator file."""


@dataclass(eq=False)
class OsusOperator:
    """Sparse cells-by-nodes matrix in compressed-row form plus mesh metadata.

    ``cell_h`` is the local tangent-plane edge length of each cell (mean over
    its vertices) and ``h_global`` the mean Euclidean edge length; both feed
    the element thresholds and are stored with the operator because they
    depend on the mesh alone.
    """

    n_nodes: int
    n_cells: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    fingerprint: bytes
    h_global: float
    cell_h: np.ndarray
    interior_ring: float = wls.INTERIOR_RING
    boundary_ring: float = wls.BOUNDARY_RING
    flagged_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def nnz(self) -> int:
        return len(self.data)

    @property
    def matrix(self) -> sparse.csr_matrix:
        m = self.__dict__.get("_matrix")
        if m is None:
            m = sparse.csr_matrix(
                (self.data, self.indices, self.indptr), shape=(self.n_cells, self.n_nodes)
            )
            self.__dict__["_matrix"] = m
        return m

    def row(self, sigma: int):
        """Column indices and weights of row ``sigma``."""
        lo, hi = self.indptr[sigma], self.indptr[sigma + 1]
        return self.indices[lo:hi], self.data[lo:hi]

    def check_mesh(self, mesh: Mesh) -> None:
        if (mesh.n_vertices, mesh.n_elements) != (self.n_nodes, self.n_cells):
            raise OperatorError(
                "operator is %dx%d but mesh has %d elements and %d vertices"
                % (self.n_cells, self.n_nodes, mesh.n_elements, mesh.n_vertices)
            )
        if mesh.fingerprint != self.fingerprint:
            raise OperatorError("mesh fingerprint does not match the operator")

    def __eq__(self, other):
        if not isinstance(other, OsusOperator):
            return NotImplemented
        return (
            (self.n_nodes, self.n_cells, self.fingerprint) == (other.n_nodes, other.n_cells, other.fingerprint)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.data.view(np.uint64), other.data.view(np.uint64))
            and np.array_equal(self.cell_h.view(np.uint64), other.cell_h.view(np.uint64))
            and struct.pack("<d", self.h_global) == struct.pack("<d", other.h_global)
            and (self.interior_ring, self.boundary_ring) == (other.interior_ring, other.boundary_ring)
        )


def assemble(
    mesh: Mesh,
    degree: int = 2,
    interior_ring: float = wls.INTERIOR_RING,
    boundary_ring: float = wls.BOUNDARY_RING,
    cond_max: float = wls.COND_MAX,
    ring_cap: float = wls.RING_CAP,
    h_local: str = "stencil",
) -> OsusOperator:
    """Build the OSUS operator of ``mesh``.

    Each corner of a cell contributes ``xi * (m(center)^T X)`` over its stencil,
    where ``X`` is the corner node's WLS coefficient operator and ``m`` the
    monomial row of the projected center; the corner value itself enters with
    ``-xi``.  Rows are merged over duplicate columns.
    """
    M, k = mesh.elements.shape
    fits = wls.fit_all_nodes(mesh, degree, interior_ring, boundary_ring, cond_max, ring_cap)
    xi = 1.0 / k
    centers = mesh.cell_centers
    corner_nodes = mesh.elem_nodes.ravel()
    corner_cell = np.repeat(np.arange(M), k)
    rows, cols, vals = [], [], []
    for batch, pos, brows in fits.batch_rows(corner_nodes):
        weights = batch.eval_rows(brows, centers[corner_cell[pos]])
        mask = batch.mask[brows]
        rows.append(np.broadcast_to(corner_cell[pos][:, None], mask.shape)[mask])
        cols.append(mesh.node_vertex[batch.stencil[brows][mask]])
        vals.append(xi * weights[mask])
    rows.append(corner_cell)
    cols.append(mesh.elements.ravel())
    vals.append(np.full(M * k, -xi))
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(M, mesh.n_vertices),
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    # Both layers reproduce constants, so every row sums to zero exactly;
    # spread the assembly roundoff over the row to keep that property.
    counts = np.diff(A.indptr)
    nonempty = counts > 0
    if nonempty.any():
        sums = np.zeros(M)
        sums[nonempty] = np.add.reduceat(A.data, A.indptr[:-1][nonempty])
        A.data -= np.repeat(sums / np.maximum(counts, 1), counts)

    node_h = wls.local_edge_lengths(mesh, fits, h_local)
    cell_h = node_h[mesh.elem_nodes].mean(axis=1) if M else np.zeros(0)
    flagged_nodes = np.flatnonzero(fits.flagged)
    flagged_rows = np.flatnonzero(np.isin(mesh.elem_nodes, flagged_nodes).any(axis=1))
    if len(flagged_rows):
        logger.warning("%d operator rows built from ill-conditioned fits", len(flagged_rows))
    return OsusOperator(
        mesh.n_vertices, M,
        A.indptr.astype(np.uint64), A.indices.astype(np.uint32), A.data.astype(np.float64),
        mesh.fingerprint, float(mesh.global_edge_length), cell_h,
        float(interior_ring), float(boundary_ring), flagged_rows,
    )


def apply(op: OsusOperator, f, mesh: Mesh | None = None) -> np.ndarray:
    """Per-cell indicators ``alpha = O f``."""
    f = np.asarray(f, dtype=float)
    if f.shape != (op.n_nodes,):
        raise OperatorError("expected %d nodal values, got shape %s" % (op.n_nodes, f.shape))
    if mesh is not None:
        op.check_mesh(mesh)
    return op.matrix @ f


def save(op: OsusOperator, path) -> None:
    """Write the little-endian operator file (temp file, then rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, op.n_nodes, op.n_cells, op.nnz, op.fingerprint))
        fh.write(np.ascontiguousarray(op.indptr, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(op.indices, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(op.data, dtype="<f8").tobytes())
        fh.write(_TRAILER.pack(op.h_global, op.interior_ring, op.boundary_ring))
        fh.write(np.ascontiguousarray(op.cell_h, dtype="<f8").tobytes())
    tmp.replace(path)


def load(path, mesh: Mesh | None = None) -> OsusOperator:
    """Read an operator file; with ``mesh`` given, verify its fingerprint."""
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise OperatorError("truncated operator file")
    magic, version, n, m, nnz, fp = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise OperatorError("not an OSUS operator file")
    if version != VERSION:
        raise OperatorError("unsupported operator file version %d" % version)
    off = _HEADER.size

    def take(dtype, count):
        nonlocal off
        size = np.dtype(dtype).itemsize * count
        if off + size > len(buf):
            raise OperatorError("truncated operator file")
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off).copy()
        off += size
        return arr

    indptr = take("<u8", m + 1)
    indices = take("<u4", nnz)
    data = take("<f8", nnz)
    if off + _TRAILER.size > len(buf):
        raise OperatorError("truncated operator file")
    h_global, ring_in, ring_bd = _TRAILER.unpack_from(buf, off)
    off += _TRAILER.size
    cell_h = take("<f8", m)
    op = OsusOperator(
        int(n), int(m), indptr.astype(np.uint64), indices.astype(np.uint32), data.astype(np.float64),
        fp, h_global, cell_h, ring_in, ring_bd,
    )
    if mesh is not None:
        op.check_mesh(mesh)
    return op


def write_flagged_csv(op: OsusOperator, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("cell_id\n" + "".join("%d\n" % r for r in op.flagged_rows))
    tmp.replace(path)
