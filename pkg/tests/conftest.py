import numpy as np
import pytest

from analysis.donor_model import bare_electron, get_donor
from config.settings import settings
from models.spin_models import BathCouplings


@pytest.fixture
def bismuth():
    return get_donor("Bi")


@pytest.fixture
def phosphorus():
    return get_donor("P")


@pytest.fixture
def electron():
    """Spin-zero host: unmixed two-level central spin"""
    return bare_electron()


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))


def make_couplings(positions, hyperfine, field=0.3):
    """Hand-built couplings for a small bath, positions in angstrom"""
    positions = np.asarray(positions, dtype=float)
    return BathCouplings(
        positions=positions,
        hyperfine=np.asarray(hyperfine, dtype=float),
        contact=np.asarray(hyperfine, dtype=float),
        gamma_n=settings.GAMMA_SI29,
        b_direction=np.array([0.0, 0.0, 1.0]),
        field=field,
    )


@pytest.fixture
def small_bath(rng):
    """Three or four 29Si spins a few angstrom apart with random Ising couplings"""
    def build(size):
        positions = rng.uniform(-4.0, 4.0, size=(size, 3))
        # keep pairs at least 2 angstrom apart
        positions += np.arange(size)[:, np.newaxis] * np.array([2.5, 0.0, 0.0])
        hyperfine = rng.uniform(-2e4, 2e4, size=size)
        return make_couplings(positions, hyperfine)
    return build
