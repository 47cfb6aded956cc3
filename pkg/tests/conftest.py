import numpy as np
import pytest

from ccdist import scenarios as sc
from ccdist.core import ChartBox, VaryingNorm, VectorFieldStructure
from ccdist._engine import PolySpec, constant_poly_spec, identity_poly_spec


@pytest.fixture(scope="session")
def heis_family():
    return sc.heisenberg_family([1.0, 0.5, 0.25, 0.1])


@pytest.fixture(scope="session")
def heis_sub(heis_family):
    """Sub-Riemannian Heisenberg member (eps = 0) with its norm and box."""
    f, N = heis_family.member(0.0)
    return f, N, heis_family.box


@pytest.fixture(scope="session")
def heis_riem(heis_family):
    f, N = heis_family.member(1.0)
    return f, N, heis_family.box


@pytest.fixture(scope="session")
def euclid2():
    fam = sc.euclidean_family(2)
    f, N = fam.member(0.0)
    return f, N, fam.box


@pytest.fixture(scope="session")
def grushin():
    exps = np.array([[0, 0], [1, 0]], dtype=np.int64)
    coefs = np.zeros((2, 2, 2))
    coefs[0, 0, 0] = 1.0
    coefs[1, 1, 1] = 1.0
    f = VectorFieldStructure.from_poly(PolySpec(exps, coefs), smooth=True,
                                       name="grushin")
    box = ChartBox(np.array([-2.0, -2.0]), np.array([2.0, 2.0]))
    return f, box


@pytest.fixture()
def line1d():
    f = VectorFieldStructure.from_poly(constant_poly_spec(np.array([[1.0]])),
                                       smooth=True, name="line")
    box = ChartBox(np.array([-2.0]), np.array([6.0]))
    return f, VaryingNorm.euclidean(1), box
