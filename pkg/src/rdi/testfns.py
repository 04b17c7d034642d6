"""Analytic test functions and their discontinuity loci.

Every function takes an ``(n, 3)`` array of points (2D points are padded
with ``z = 0``) and returns ``n`` values.  Sphere functions use colatitude
``theta`` in ``[0, pi]`` and longitude ``phi`` in ``[0, 2 pi)``.

Truth labels classify nodes by their distance to each analytic locus:

==== ==================================================================
 2   within the band of a C0 locus whose local jump is not negligible
 1   within the band of a C1 locus (crease)
 0   smooth
-1   within the band of a C0 locus whose jump nearly vanishes there
==== ==================================================================

The ``-1`` class keeps points where a jump fades to zero (``f2`` on the
equator, ``f3`` near ``(1/2, 0)``) out of both recall and false-positive
counts, since no detector can be held to either answer there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .mesh import Mesh, _atomic_write_text

SMOOTH, C1, C0, WEAK = 0, 1, 2, -1

# A C0 locus counts as WEAK where its jump is below this fraction of the
# function's global range.
WEAK_JUMP = 0.05


def _points(points) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if p.shape[1] == 2:
        p = np.column_stack([p, np.zeros(len(p))])
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError("points must have shape (n, 2) or (n, 3)")
    return p


def spherical(points):
    """Colatitude and longitude of (not necessarily unit) points."""
    p = _points(points)
    r = np.linalg.norm(p, axis=1)
    theta = np.arccos(np.clip(p[:, 2] / np.where(r > 0, r, 1.0), -1.0, 1.0))
    phi = np.mod(np.arctan2(p[:, 1], p[:, 0]), 2 * np.pi)
    return theta, phi


# -- sphere functions ---------------------------------------------------------


def _f1_theta(theta):
    # The ramp ends where it meets 0.44, at theta = pi/2.
    return np.select(
        [theta < 5 * np.pi / 18, theta < np.pi / 2, theta < 13 * np.pi / 18, theta < 9 * np.pi / 10],
        [1.0, 1.7 - 2.52 * theta / np.pi, 0.44, 0.24],
        0.12,
    )


def f1(points):
    """Interacting waves: a plateau, a linear ramp and three steps in theta."""
    theta, _ = spherical(points)
    return _f1_theta(theta)


def _f2_piece(theta):
    t = theta / np.pi
    return np.select(
        [theta < np.pi / 4, theta < np.pi / 2, theta < 3 * np.pi / 4, theta < 7 * np.pi / 8],
        [0.5, -4 * (t - 0.5), 4 * (t - 0.5), 1.0],
        -64 * t * t + 112 * t - 48,
    )


def f2(points):
    """Crossing waves: a theta profile flipped in sign across ``x = 0``."""
    theta, phi = spherical(points)
    return -1000.0 + 2000.0 * np.sign(np.cos(phi)) * _f2_piece(theta)


# -- planar functions ---------------------------------------------------------


def _f3_smooth(x, y):
    return x * y + np.cos(2 * np.pi * x * x) - np.sin(2 * np.pi * x * x)


def f3(points):
    """Smooth oscillation plus ``10x - 5`` outside the disc of radius 1/2."""
    p = _points(points)
    x, y = p[:, 0], p[:, 1]
    return _f3_smooth(x, y) + np.where(x * x + y * y > 0.25, 10 * x - 5, 0.0)


def f5(points):
    """Radial crease at the origin and on the circle of radius 1/2."""
    p = _points(points)
    r = np.hypot(p[:, 0], p[:, 1])
    return np.abs(r - 0.5) + np.sin(2 * np.pi * r) / 12


# -- functions on surfaces with features --------------------------------------


def f6(points):
    p = _points(points)
    x, y, z = p.T
    return np.tanh(x) * np.sign(y) + np.tanh(y) * np.sign(z) + np.tanh(z) * np.sign(x)


def g(s):
    """Piecewise profile on ``[0, 1]``: crease at 1/4, jump at 1/2."""
    s = np.asarray(s, dtype=float)
    return np.select(
        [s < 0.25, s < 0.5, s < 0.75],
        [s, 0.5 - s, 0.75],
        16 * (s - 0.75) ** 3 + 0.75,
    )


def _x_span(x):
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        raise ValueError("f7 needs points with a nonzero x extent")
    return lo, hi


def f7(points):
    """``g`` stretched over the x extent of the given point set."""
    x = _points(points)[:, 0]
    lo, hi = _x_span(x)
    return (hi - lo) * g((x - lo) / (hi - lo))


def g1(x, y, z, a):
    """Two linear pieces meeting along ``z = a``."""
    x, y, z = (np.asarray(c, dtype=float) for c in (x, y, z))
    return np.where(z > a, a + 1.5 * (y - a), x)


def g2(t):
    """Polyline profile with a kink at ``t = 1``."""
    t = np.asarray(t, dtype=float)
    return np.where(t > 1, 1 + 0.5 * (t - 1), t)


# -- simple probes ------------------------------------------------------------


def _xy(points):
    p = _points(points)
    return p[:, 0], p[:, 1]


def sincos(points):
    x, y = _xy(points)
    return np.sin(x) * np.cos(y)


def step(points):
    x, _ = _xy(points)
    return np.where(x >= 0, 1.0, 0.0)


def abs_x(points):
    x, _ = _xy(points)
    return np.abs(x)


def paraboloid(points):
    x, y = _xy(points)
    return x * x + y * y


def const(points):
    return np.full(len(_points(points)), 7.0)


def z_plus_2(points):
    return _points(points)[:, 2] + 2.0


# -- loci -----------------------------------------------------------------------


@dataclass(frozen=True)
class Locus:
    """A discontinuity curve.

    ``distance`` maps points to their distance from the curve (geodesic on
    the unit sphere, Euclidean in the plane); ``jump`` maps points to the
    size of the value jump at the nearest curve point (C0 loci only).
    """

    kind: int
    distance: Callable
    jump: Callable | None = None


def _theta_circle(theta0, kind, jump=None):
    return Locus(kind, lambda p: np.abs(spherical(p)[0] - theta0), jump)


def _const_jump(value):
    return lambda p: np.full(len(p), float(value))


def _f2_meridian_jump(p):
    # nearest point of the great circle x = 0
    q = p.copy()
    q[:, 0] = 0.0
    theta, _ = spherical(q)
    return 4000.0 * np.abs(_f2_piece(theta))


def _f3_jump(p):
    r = np.hypot(p[:, 0], p[:, 1])
    x = 0.5 * p[:, 0] / np.where(r > 0, r, 1.0)
    return np.abs(10 * x - 5)


def _plane(axis):
    return lambda p: np.abs(p[:, axis])


def _radius(r0):
    return lambda p: np.abs(np.hypot(p[:, 0], p[:, 1]) - r0)


def _f7_loci(points):
    x = points[:, 0]
    lo, hi = _x_span(x)
    span = hi - lo
    return [
        Locus(C1, lambda p: np.abs(p[:, 0] - (lo + 0.25 * span))),
        Locus(C0, lambda p: np.abs(p[:, 0] - (lo + 0.5 * span)), _const_jump(0.75 * span)),
    ]


@dataclass(frozen=True)
class TestFunction:
    """Analytic function with its discontinuity loci.

    ``loci`` is either a list of :class:`Locus` or a callable building that
    list from the evaluation points (for functions normalized by the point
    set, such as ``f7``).  ``value_range`` is the function's global range
    where it is known in closed form; otherwise the range over the
    classified points is used to judge which jumps are negligible.
    """

    __test__ = False  # not a pytest class

    name: str
    evaluator: Callable
    loci: object = field(default_factory=list)
    domain: str = "any"
    value_range: float | None = None

    def __call__(self, points):
        return self.evaluator(_points(points))

    def loci_for(self, points) -> list:
        return self.loci(_points(points)) if callable(self.loci) else list(self.loci)

    def classify(self, points, band: float) -> np.ndarray:
        """Truth class of each point for a tolerance ``band``."""
        p = _points(points)
        values = self.evaluator(p)
        if self.value_range is not None:
            span = self.value_range
        else:
            span = float(values.max() - values.min()) if len(values) else 0.0
        labels = np.full(len(p), SMOOTH, dtype=np.int8)
        near_c0 = np.zeros(len(p), dtype=bool)
        weak = np.zeros(len(p), dtype=bool)
        for locus in self.loci_for(p):
            near = locus.distance(p) <= band
            if locus.kind == C1:
                labels[near] = C1
            else:
                strong = locus.jump(p) >= WEAK_JUMP * span
                near_c0 |= near & strong
                weak |= near & ~strong
        labels[weak] = WEAK
        labels[near_c0] = C0
        return labels


FUNCTIONS = {
    tf.name: tf
    for tf in [
        TestFunction(
            "f1", f1,
            [
                _theta_circle(5 * np.pi / 18, C1),
                _theta_circle(np.pi / 2, C1),
                _theta_circle(13 * np.pi / 18, C0, _const_jump(0.2)),
                _theta_circle(9 * np.pi / 10, C0, _const_jump(0.12)),
            ],
            "sphere",
            1.0 - 0.12,
        ),
        TestFunction(
            "f2", f2,
            [
                _theta_circle(np.pi / 4, C0, _const_jump(1000.0)),
                Locus(C0, lambda p: np.arcsin(np.clip(np.abs(p[:, 0]) / np.linalg.norm(p, axis=1), 0, 1)),
                      _f2_meridian_jump),
                _theta_circle(np.pi / 2, C1),
                _theta_circle(3 * np.pi / 4, C1),
            ],
            "sphere",
            4000.0,
        ),
        TestFunction("f3", f3, [Locus(C0, _radius(0.5), _f3_jump)], "plane"),
        TestFunction("f5", f5, [Locus(C1, lambda p: np.hypot(p[:, 0], p[:, 1])), Locus(C1, _radius(0.5))], "plane"),
        TestFunction(
            "f6", f6,
            [
                Locus(C0, _plane(0), lambda p: 2 * np.abs(np.tanh(p[:, 2]))),
                Locus(C0, _plane(1), lambda p: 2 * np.abs(np.tanh(p[:, 0]))),
                Locus(C0, _plane(2), lambda p: 2 * np.abs(np.tanh(p[:, 1]))),
            ],
        ),
        TestFunction("f7", f7, _f7_loci),
        TestFunction("sincos", sincos),
        TestFunction("step", step, [Locus(C0, _plane(0), _const_jump(1.0))]),
        TestFunction("abs_x", abs_x, [Locus(C1, _plane(0))]),
        TestFunction("paraboloid", paraboloid),
        TestFunction("const", const),
        TestFunction("z_plus_2", z_plus_2),
    ]
}


def get(name: str) -> TestFunction:
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise KeyError("unknown test function %r (known: %s)" % (name, ", ".join(sorted(FUNCTIONS)))) from None


def eval(name: str, points) -> np.ndarray:  # noqa: A001 - mirrors the operation name
    """Evaluate the named test function at ``points``."""
    return get(name)(points)


def truth_set(name: str, mesh: Mesh, band: float) -> np.ndarray:
    """Per-vertex truth class of the named function on ``mesh``."""
    return get(name).classify(mesh.vertex_coords, band)


def write_truth_csv(labels, path) -> None:
    _atomic_write_text(Path(path), "node_id,class\n" + "".join("%d,%d\n" % (i, c) for i, c in enumerate(labels)))
