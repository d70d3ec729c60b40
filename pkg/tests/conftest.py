import numpy as np
import pytest

from specdeform.dispersion import DispersionSpec, certify_bounds
from specdeform.grids import MomentumGrid
from specdeform.potential import PotentialSpec, construct_embedded


@pytest.fixture(scope="session")
def ksq():
    """omega(k) = k^2."""
    return DispersionSpec("even_polynomial", coefficients=(0.0, 1.0))


@pytest.fixture(scope="session")
def quartic():
    return DispersionSpec("quartic")


@pytest.fixture(scope="session")
def zero_disp():
    return DispersionSpec("even_polynomial")


@pytest.fixture(scope="session")
def relativistic():
    return DispersionSpec("relativistic", exponent=0.5, strip_radius=0.4)


@pytest.fixture(scope="session")
def ref_bounds(ksq):
    return certify_bounds(ksq, ksq, (-2.0, 2.0), strip=0.25, resolution=0.05)


@pytest.fixture(scope="session")
def quartic_bounds(zero_disp, quartic):
    return certify_bounds(zero_disp, quartic, (-0.5, 0.5), strip=0.25,
                          resolution=0.05)


@pytest.fixture(scope="session")
def gaussian_pot():
    return PotentialSpec("gaussian", amplitude=-0.5, width=0.5, decay_rate=2.0)


@pytest.fixture(scope="session")
def small_grid():
    return MomentumGrid(8.0, 101)


@pytest.fixture(scope="session")
def mid_grid():
    return MomentumGrid(12.0, 201)


@pytest.fixture(scope="session")
def embedded_pot():
    bump = PotentialSpec("bump", amplitude=1.0, support_radius=2.0)
    return construct_embedded(1.0, bump, half_width=30.0, step=0.01)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
