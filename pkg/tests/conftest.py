import numpy as np
import pytest

from euler2d.fespace import build_space
from euler2d.mesh import build_unit_square_mesh


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def mesh3p():
    return build_unit_square_mesh(3, periodic=True)


@pytest.fixture(scope="session")
def mesh2p():
    return build_unit_square_mesh(2, periodic=True)


@pytest.fixture(scope="session")
def mesh3w():
    return build_unit_square_mesh(3, periodic=False)


@pytest.fixture(scope="session")
def spaces3p(mesh3p):
    return {
        "V0": build_space(mesh3p, "CG", 2),
        "V1": build_space(mesh3p, "BDM", 1),
        "V2": build_space(mesh3p, "DG", 0),
    }
