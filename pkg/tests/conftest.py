import numpy as np
import pytest

from rdi import meshgen
from rdi.mesh import Mesh


def cube_mesh(size=1.0):
    """Closed unit cube, two outward-facing triangles per face."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float) * size
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return Mesh.from_arrays(v, tris)


@pytest.fixture(scope="session")
def cube():
    return cube_mesh()


@pytest.fixture(scope="session")
def grid16():
    return meshgen.flat_grid(16)


@pytest.fixture(scope="session")
def ico3():
    return meshgen.icosphere(3)


@pytest.fixture(scope="session")
def cyl():
    return meshgen.cylinder(32, 16)
