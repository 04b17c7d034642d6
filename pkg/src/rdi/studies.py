"""Refinement, weighting and timing studies.

Each study returns a list of row dictionaries plus a dictionary of fitted
log-log slopes, ready to be written as a CSV table.
"""
from __future__ import annotations

import time

import numpy as np

from . import meshgen, osus, testfns
from .indicator import DetectConfig, detect, node_beta
from .mesh import Mesh


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def band_max(op, mesh: Mesh, f, mask) -> float:
    alpha = np.abs(osus.apply(op, f))
    return float(alpha[mask].max()) if mask.any() else 0.0


def convergence(ns=(16, 32, 64, 128), pattern: str = "right", band: float = 3.0):
    """Max ``|alpha|`` for a smooth, a creased and a stepped function.

    The smooth maximum is taken over all cells; the crease (``|x|``) and
    step maxima over cells whose centers lie within ``band`` grid spacings
    of ``x = 0``.  Expected slopes against ``h`` are 2, 1 and 0.
    """
    rows = []
    for n in ns:
        mesh = meshgen.flat_grid(n, pattern)
        op = osus.assemble(mesh)
        h = 2.0 / n
        near = np.abs(mesh.cell_centers[:, 0]) <= band * h
        pts = mesh.vertex_coords
        rows.append({
            "n": n,
            "h": h,
            "smooth": band_max(op, mesh, testfns.sincos(pts), np.ones(mesh.n_elements, bool)),
            "c1": band_max(op, mesh, testfns.abs_x(pts), near),
            "c0": band_max(op, mesh, testfns.step(pts), near),
        })
    h = [r["h"] for r in rows]
    slopes = {k: loglog_slope(h, [r[k] for r in rows]) for k in ("smooth", "c1", "c0")}
    return rows, slopes


def junction_fixture(size: float = 1e-3, ratio: float = 0.02) -> tuple[Mesh, int]:
    """Planar mesh with one coarse and three thin cells around a vertex.

    Vertex ``v`` at the origin touches the coarse right triangle
    ``(v, (s, 0), (0, s))`` and three cells whose short edges have length
    ``ratio * s``; an outer ring of cells makes ``v`` an interior vertex.
    Returns the mesh and ``v``.
    """
    s, e = size, ratio * size
    coords = np.array([
        [0, 0], [s, 0], [0, s], [0, -e], [-e, 0],   # v, p1, p2, q1, q2
        [2 * s, -2 * s], [2 * s, 2 * s], [-2 * s, 2 * s], [-2 * s, -2 * s],  # a, d, c, b
    ], dtype=float)
    v, p1, p2, q1, q2, a, d, c, b = range(9)
    tris = [
        (v, p1, p2), (v, q1, p1), (v, q2, q1), (v, p2, q2),
        (p1, d, p2), (p1, a, d), (p2, d, c), (p2, c, q2),
        (q2, c, b), (q2, b, q1), (q1, b, a), (q1, a, p1),
    ]
    return Mesh.from_arrays(coords, tris), v


def junction_function(points):
    """``x y``: zero second derivative along the thin cells' long edges."""
    p = np.asarray(points, dtype=float)
    return p[:, 0] * p[:, 1]


def nonuniform(ratios=(0.1, 0.05, 0.02, 0.01), size: float = 1e-3, config: DetectConfig = DetectConfig()):
    """``beta`` at the junction vertex under unit and area weights."""
    rows = []
    for ratio in ratios:
        mesh, v = junction_fixture(size, ratio)
        op = osus.assemble(mesh)
        f = junction_function(mesh.vertex_coords)
        alpha = osus.apply(op, f)
        row = {"ratio": ratio}
        for mode in ("unit", "area"):
            cfg = config.replace(weight_mode=mode)
            row["beta_" + mode] = node_beta(mesh, alpha, v, cfg)
            row["marker_" + mode] = int(detect(mesh, op, f, cfg).markers[v])
        rows.append(row)
    return rows, {}


def _best_time(fn, repeat: int) -> float:
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def timing(levels=(2, 3, 4, 5), repeat: int = 3, apply_repeat: int = 50, seed: int = 0):
    """Best-of-``repeat`` assembly and apply times on refined icospheres."""
    rng = np.random.default_rng(seed)
    rows = []
    for level in levels:
        mesh = meshgen.icosphere(level)
        size = mesh.n_vertices + mesh.n_elements
        t_asm = _best_time(lambda: osus.assemble(mesh), repeat)
        op = osus.assemble(mesh)
        f = rng.standard_normal(mesh.n_vertices)
        op.matrix  # build the CSR view outside the timed region
        t_apply = _best_time(lambda: [osus.apply(op, f) for _ in range(apply_repeat)], repeat) / apply_repeat
        rows.append({"level": level, "size": size, "assemble": t_asm, "apply": t_apply})
    sizes = [r["size"] for r in rows]
    slopes = {k: loglog_slope(sizes, [r[k] for r in rows]) for k in ("assemble", "apply")}
    return rows, slopes


STUDIES = {"convergence": convergence, "nonuniform": nonuniform, "timing": timing}
