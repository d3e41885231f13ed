import numpy as np
import pytest

from bltrecon import fem
from bltrecon.mesh import generate_square_mesh


@pytest.fixture(scope="session")
def mesh2():
    return generate_square_mesh(2)


@pytest.fixture(scope="session")
def mesh8():
    return generate_square_mesh(8)


@pytest.fixture(scope="session")
def coarse_mesh():
    """Structured stand-in for the benchmark-scale reconstruction mesh."""
    return generate_square_mesh(38)


@pytest.fixture(scope="session")
def medium2(mesh2):
    return fem.MediumParams.uniform(mesh2)


def dense_mass(mesh):
    """Independent dense assembly of the full mass matrix (plain loops)."""
    n = mesh.vertex_count
    M = np.zeros((n, n))
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    for e in range(mesh.element_count):
        idx = mesh.elements[e]
        M[np.ix_(idx, idx)] += mesh.areas[e] * local
    return M
