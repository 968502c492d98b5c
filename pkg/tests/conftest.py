import numpy as np
import pytest

from fourbody.charts import (BlowupState, DelaunayElements, jacobi_from_blowup)
from fourbody.model import MassConfig


@pytest.fixture
def equal_masses():
    return MassConfig(1.0, 1.0)


@pytest.fixture
def mixed_masses():
    return MassConfig(1.3, 0.7)


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def iso_state(masses, v, psi, what, r=1.0, side="left", L_sp=1.2, ell_sp=40.0):
    """Exactly isosceles Jacobi state with a hyperbolic spectator."""
    bl = BlowupState(r=r, v=v, psi=psi, what=what, side=side)
    sp = DelaunayElements("hyperbolic", L_sp, ell_sp, 0.0, 0.0)
    return jacobi_from_blowup(bl, masses, spectator=sp)
