import numpy as np
import pytest

from rpsde.convolution import DiffusionSpec
from rpsde.drift import DriftSpec
from rpsde.spectral import decompose


@pytest.fixture
def split2():
    return decompose(np.diag([2.0, -3.0]))


@pytest.fixture
def split1():
    return decompose(np.array([[1.0]]))


@pytest.fixture
def fourier_b0():
    rng = np.random.default_rng(7)
    return DiffusionSpec.fourier(
        np.eye(2), rng.normal(scale=0.3, size=(3, 2, 2)), rng.normal(scale=0.3, size=(3, 2, 2)), 1.0
    )


@pytest.fixture
def sin_drift():
    return DriftSpec.sinusoidal_forcing(1.0, 1.0)


def random_symmetric(rng, d, spread=3.0):
    q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    mags = rng.uniform(0.5, spread, d)
    signs = rng.choice([-1.0, 1.0], d)
    return (q * (signs * mags)) @ q.T
