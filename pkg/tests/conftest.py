import numpy as np
import pytest

from dhlab.model import REFERENCE_DIFFUSION, REFERENCE_DRIFT, REFERENCE_Z0, reference_model, validate
from dhlab.sim import TimeGrid, simulate_path


@pytest.fixture(scope="session")
def model():
    return reference_model()


@pytest.fixture(scope="session")
def z0():
    return REFERENCE_Z0


@pytest.fixture(scope="session")
def decoupled():
    """Reference drift with the cross-feed switched off."""
    return validate(REFERENCE_DRIFT.replace(b21=0.0), REFERENCE_DIFFUSION)


@pytest.fixture(scope="session")
def path200(model, z0):
    return simulate_path(model, z0, TimeGrid(200.0, 0.1), seed=11, replication=3)


@pytest.fixture(scope="session")
def tau(model):
    return model.drift.as_vector()


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
