"""Element thresholds, node oscillation indicators and dual thresholding.

The online stage of the detector:

1. ``alpha = O f`` (one sparse product),
2. cells with ``|alpha| > tau`` mark their vertices,
3. marked vertices are resolved by the node indicator ``beta``: large
   values mean sign alternation (C0), intermediate values a crease (C1),
   small values a smooth extremum that is cleared.

All node quantities are computed per node, i.e. per vertex copy of a
virtually split mesh, and merged back to vertices by taking the maximum.
"""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from . import osus
from .mesh import Mesh, _atomic_write_text

logger = logging.getLogger(__name__)

EPS_MIN = np.finfo(float).tiny

# |alpha| must also exceed this many ulps of sum_j |O_ij f_j| to pass the
# pre-filter; otherwise roundoff in alpha passes when tau vanishes.
ROUNDOFF_ULPS = 64.0

SMOOTH, C1, C0 = 0, 1, 2


@dataclass(frozen=True)
class DetectConfig:
    """Detector parameters.

    Parameters
    ----------
    c_local, c_global : float
        Coefficients of the local and global element thresholds.
    kappa0, kappa1 : float
        Node thresholds for C0 and C1 markers, ``kappa0 > kappa1 > 0``.
    eps_beta : float
        Relative safeguard in the denominator of ``beta``.
    weight_mode : {'area', 'unit'}
        Cell weights in ``beta``.
    interior_beta_ring, boundary_beta_ring : int
        Cell neighborhoods for ``beta`` away from and on patch boundaries.
    compute_all_beta : bool
        Evaluate ``beta`` at every node instead of only pre-filtered ones.
    """

    c_local: float = 0.002
    c_global: float = 0.02
    kappa0: float = 0.35
    kappa1: float = 0.2
    eps_beta: float = 1e-3
    weight_mode: str = "area"
    interior_beta_ring: int = 1
    boundary_beta_ring: int = 2
    compute_all_beta: bool = False

    def __post_init__(self):
        if not (self.kappa0 > self.kappa1 > 0):
            raise ValueError("need kappa0 > kappa1 > 0, got %g, %g" % (self.kappa0, self.kappa1))
        if self.c_local < 0 or self.c_global < 0:
            raise ValueError("threshold coefficients must be nonnegative")
        if not self.eps_beta > 0:
            raise ValueError("eps_beta must be positive")
        if self.weight_mode not in ("area", "unit"):
            raise ValueError("weight_mode must be 'area' or 'unit'")
        if self.interior_beta_ring < 1 or self.boundary_beta_ring < 1:
            raise ValueError("beta rings must be at least 1")

    def replace(self, **changes) -> "DetectConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_file(cls, path, **overrides) -> "DetectConfig":
        """Read ``key = value`` lines (``#`` starts a comment)."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if not sep or key not in types:
                raise ValueError("%s:%d: unknown or malformed entry %r" % (path, lineno, line))
            values[key] = _parse_value(types[key], raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _parse_value(kind: str, raw: str):
    if kind == "bool":
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError("not a boolean: %r" % raw)
        return raw.lower() in ("true", "1", "yes")
    return {"float": float, "int": int, "str": str}[kind](raw)


@dataclass
class IndicatorResult:
    """Output of :func:`detect`.

    ``alpha`` and ``tau`` are per cell; ``beta`` and ``markers`` per vertex
    (``beta`` is NaN where it was not needed).  The ``node_*`` arrays hold
    the same quantities per node and ``passed`` the cells that survived
    the element pre-filter.
    """

    alpha: np.ndarray
    tau: np.ndarray
    beta: np.ndarray
    markers: np.ndarray
    passed: np.ndarray
    node_beta: np.ndarray
    node_markers: np.ndarray
    timings: dict = field(default_factory=dict)

    def counts(self) -> dict:
        m = self.markers
        return {"smooth": int((m == SMOOTH).sum()), "c1": int((m == C1).sum()), "c0": int((m == C0).sum())}


# -- element thresholds -------------------------------------------------------


def _row_ranges(op: osus.OsusOperator, f) -> np.ndarray:
    if op.n_cells == 0:
        return np.zeros(0)
    vals = f[op.indices.astype(np.intp)]
    starts = op.indptr[:-1].astype(np.intp)
    return np.maximum.reduceat(vals, starts) - np.minimum.reduceat(vals, starts)


def element_thresholds(op: osus.OsusOperator, f, config: DetectConfig = DetectConfig()) -> np.ndarray:
    """Per-cell ``tau = max(C_l df_l h_l^0.5, C_g df_g h_g^1.5)``.

    ``df_l`` is the range of ``f`` over the cell's operator row, which is
    the union of the stencils of its vertices; ``df_g`` is the global range.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (op.n_nodes,):
        raise osus.OperatorError("expected %d nodal values, got shape %s" % (op.n_nodes, f.shape))
    df_g = float(f.max() - f.min()) if len(f) else 0.0
    tau_l = config.c_local * _row_ranges(op, f) * np.sqrt(op.cell_h)
    tau_g = config.c_global * df_g * op.h_global**1.5
    return np.maximum(tau_l, tau_g)


def element_threshold(op: osus.OsusOperator, f, sigma: int, config: DetectConfig = DetectConfig()) -> float:
    return float(element_thresholds(op, f, config)[sigma])


def roundoff_floor(op: osus.OsusOperator, f) -> np.ndarray:
    """Size of floating-point noise in each ``alpha``."""
    A = op.matrix
    absA = sparse.csr_matrix((np.abs(A.data), A.indices, A.indptr), shape=A.shape)
    return ROUNDOFF_ULPS * np.finfo(float).eps * (absA @ np.abs(np.asarray(f, dtype=float)))


# -- node indicator -------------------------------------------------------------


def cell_weights(mesh: Mesh, mode: str) -> np.ndarray:
    if mode == "area":
        return mesh.element_areas
    if mode == "unit":
        return np.ones(mesh.n_elements)
    raise ValueError("weight_mode must be 'area' or 'unit'")


def beta_neighborhoods(mesh: Mesh, nodes, config: DetectConfig = DetectConfig()) -> sparse.csr_matrix:
    """Binary ``len(nodes) x M`` matrix of the cells entering each ``beta``."""
    nodes = np.asarray(nodes, dtype=np.intp)
    rings = np.where(mesh.node_is_boundary[nodes], config.boundary_beta_ring, config.interior_beta_ring)
    rows, cols = [np.zeros(0, dtype=np.intp)], [np.zeros(0, dtype=np.intp)]
    for k in np.unique(rings):
        sel = np.flatnonzero(rings == k)
        R = mesh.ring_elements(nodes[sel], int(k)).tocoo()
        rows.append(sel[R.row])
        cols.append(R.col)
    r, c = np.concatenate(rows), np.concatenate(cols)
    return sparse.csr_matrix(
        (np.ones(len(r), dtype=np.int32), (r, c)), shape=(len(nodes), mesh.n_elements)
    )


def node_betas(mesh: Mesh, alpha, nodes=None, config: DetectConfig = DetectConfig(), weights=None) -> np.ndarray:
    """``beta`` at the given nodes (all nodes by default)."""
    alpha = np.asarray(alpha, dtype=float)
    if nodes is None:
        nodes = np.arange(mesh.n_nodes)
    nodes = np.asarray(nodes, dtype=np.intp)
    if weights is None:
        weights = cell_weights(mesh, config.weight_mode)
    if len(nodes) == 0:
        return np.zeros(0)
    R = beta_neighborhoods(mesh, nodes, config)
    R.sort_indices()
    return beta_from_cells(R.indptr, R.indices, alpha, weights, config.eps_beta)


def beta_from_cells(indptr, cells, alpha, weights, eps_beta: float = 1e-3) -> np.ndarray:
    """``beta`` for groups of cells given in compressed-row form."""
    indptr = np.asarray(indptr, dtype=np.intp)
    cells = np.asarray(cells, dtype=np.intp)
    n = len(indptr) - 1
    counts = np.diff(indptr)
    row = np.repeat(np.arange(n), counts)
    a, w = alpha[cells], weights[cells]
    sw = np.bincount(row, weights=w, minlength=n)
    swa = np.bincount(row, weights=w * a, minlength=n)
    abar = np.divide(swa, sw, out=np.zeros(n), where=sw > 0)
    num = np.bincount(row, weights=w * np.abs(a - abar[row]), minlength=n)
    amax = np.zeros(n)
    nz = counts > 0
    if nz.any():
        amax[nz] = np.maximum.reduceat(np.abs(a), indptr[:-1][nz])
    return num / (sw * (np.abs(abar) + eps_beta * amax) + EPS_MIN)


def node_beta(mesh: Mesh, alpha, v: int, config: DetectConfig = DetectConfig(), patch: int | None = None) -> float:
    """``beta`` at vertex ``v`` (its copy in ``patch`` on split meshes)."""
    return float(node_betas(mesh, alpha, [mesh.node_of(v, patch)], config)[0])


# -- detection ------------------------------------------------------------------


def _to_vertices(mesh: Mesh, node_values, fill):
    out = np.full(mesh.n_vertices, fill, dtype=node_values.dtype)
    np.maximum.at(out, mesh.node_vertex, node_values)
    return out


def detect(mesh: Mesh, op: osus.OsusOperator, f, config: DetectConfig = DetectConfig()) -> IndicatorResult:
    """Dual-thresholding discontinuity markers for nodal values ``f``."""
    timings = {}
    t0 = time.perf_counter()
    alpha = osus.apply(op, f, mesh)
    t1 = time.perf_counter()
    timings["apply"] = t1 - t0

    f = np.asarray(f, dtype=float)
    tau = element_thresholds(op, f, config)
    abs_alpha = np.abs(alpha)
    passed = (abs_alpha > tau) & (abs_alpha > roundoff_floor(op, f))
    node_markers = np.zeros(mesh.n_nodes, dtype=np.int8)
    node_markers[mesh.elem_nodes[passed].ravel()] = C1
    t2 = time.perf_counter()
    timings["threshold"] = t2 - t1

    node_beta = np.full(mesh.n_nodes, np.nan)
    todo = np.arange(mesh.n_nodes) if config.compute_all_beta else np.flatnonzero(node_markers == C1)
    node_beta[todo] = node_betas(mesh, alpha, todo, config)
    flagged = node_markers == C1
    node_markers[flagged & (node_beta > config.kappa0)] = C0
    node_markers[flagged & (node_beta <= config.kappa1)] = SMOOTH
    timings["beta"] = time.perf_counter() - t2

    beta = _to_vertices(mesh, np.where(np.isnan(node_beta), -np.inf, node_beta), -np.inf)
    beta[np.isinf(beta)] = np.nan
    markers = _to_vertices(mesh, node_markers, np.int8(0))
    return IndicatorResult(alpha, tau, beta, markers, passed, node_beta, node_markers, timings)


def jump_function(mesh: Mesh, f, markers) -> np.ndarray:
    """Range of ``f`` over the 1-ring of each marked vertex, 0 elsewhere."""
    f = np.asarray(f, dtype=float)
    markers = np.asarray(markers)
    out = np.zeros(mesh.n_vertices)
    nodes = np.flatnonzero(markers[mesh.node_vertex] >= C1)
    if len(nodes) == 0:
        return out
    R = mesh.ring_nodes(nodes, 1)
    R.sort_indices()
    vals = f[mesh.node_vertex[R.indices]]
    starts = R.indptr[:-1]
    rng = np.maximum.reduceat(vals, starts) - np.minimum.reduceat(vals, starts)
    np.maximum.at(out, mesh.node_vertex[nodes], rng)
    return out


# -- export -------------------------------------------------------------------------


def write_cells_csv(result: IndicatorResult, path) -> None:
    rows = "".join("%d,%.17g,%.17g\n" % r for r in zip(range(len(result.alpha)), result.alpha, result.tau))
    _atomic_write_text(Path(path), "cell_id,alpha,tau\n" + rows)


def write_nodes_csv(result: IndicatorResult, path) -> None:
    rows = "".join(
        "%d,%s,%d\n" % (i, "" if np.isnan(b) else "%.17g" % b, m)
        for i, (b, m) in enumerate(zip(result.beta, result.markers))
    )
    _atomic_write_text(Path(path), "node_id,beta,marker\n" + rows)


def write_vtk(mesh: Mesh, result: IndicatorResult, path, f=None) -> None:
    """Legacy ASCII VTK polydata with point and cell data."""
    lines = ["# vtk DataFile Version 3.0", "rdi indicators", "ASCII", "DATASET POLYDATA"]
    lines.append("POINTS %d double" % mesh.n_vertices)
    lines += ["%.17g %.17g %.17g" % tuple(p) for p in mesh.vertex_coords]
    M, k = mesh.elements.shape
    lines.append("POLYGONS %d %d" % (M, M * (k + 1)))
    lines += ["%d %s" % (k, " ".join(map(str, e))) for e in mesh.elements]
    lines.append("POINT_DATA %d" % mesh.n_vertices)
    lines += ["SCALARS marker int 1", "LOOKUP_TABLE default"] + ["%d" % m for m in result.markers]
    beta = np.nan_to_num(result.beta, nan=-1.0)
    lines += ["SCALARS beta double 1", "LOOKUP_TABLE default"] + ["%.17g" % b for b in beta]
    if f is not None:
        lines += ["SCALARS f double 1", "LOOKUP_TABLE default"] + ["%.17g" % v for v in f]
    lines.append("CELL_DATA %d" % M)
    lines += ["SCALARS alpha double 1", "LOOKUP_TABLE default"] + ["%.17g" % a for a in result.alpha]
    lines += ["SCALARS tau double 1", "LOOKUP_TABLE default"] + ["%.17g" % t for t in result.tau]
    _atomic_write_text(Path(path), "\n".join(lines) + "\n")
