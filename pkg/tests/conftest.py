import numpy as np
import pytest

from shiftniche.discrete_operator import Grid
from shiftniche.environment import Logistic, niche_profile
from shiftniche.kernel import make_kernel


@pytest.fixture(scope="session")
def uniform1():
    return make_kernel("uniform", radius=1.0)


@pytest.fixture(scope="session")
def reference_growth():
    """Logistic niche: a = 1 on |x| <= 2, smoothstep ramp of width 1 to -1, b = 1."""
    return Logistic(niche_profile(inner=1.0, outer=-1.0, half_width=2.0, ramp=1.0), 1.0)


@pytest.fixture(scope="session")
def skew_kernel():
    """Asymmetric tabulated kernel (mean shifted to the right)."""
    z = np.linspace(-1.0, 2.0, 31)
    j = np.where(z < 0, 1.0 + z, 1.0 - 0.5 * z)
    return make_kernel({"abscissae": z, "densities": np.clip(j, 0.0, None)})


@pytest.fixture
def grid20():
    return Grid.from_spacing(20.0, 0.05)
