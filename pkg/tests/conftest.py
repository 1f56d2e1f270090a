import numpy as np
import pytest

from curvedks.domain import CartesianGrid
from curvedks.geometry import ConformalFactor


@pytest.fixture(scope="session")
def flat_phi():
    return ConformalFactor.zero()


@pytest.fixture(scope="session")
def bump_phi():
    return ConformalFactor.radial_bump(0.1, 2.0, (0.0, 0.0))


@pytest.fixture(scope="session")
def grid64():
    return CartesianGrid(center=(0.0, 0.0), half_width=20.0, n=64)


@pytest.fixture(scope="session")
def grid128():
    return CartesianGrid(center=(0.0, 0.0), half_width=40.0, n=128)


def lstsq_order(ns, errors):
    """Empirical convergence order: least-squares slope of ln(err) vs ln(1/n)."""
    ns = np.asarray(ns, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(1.0 / ns), np.log(errors), 1)[0])
