import math

import numpy as np
import pytest

from analysis.couplings import (
    bath_couplings, cluster_dipolar, dipolar_tensor, dump_couplings, fermi_contact, hyperfine_model_for,
    rkky_correction, secular_dipolar, secular_hyperfine, secular_part,
)
from analysis.lattice import random_bath
from config.settings import settings
from utils.exceptions import InvalidArgumentError

GAMMA = settings.GAMMA_SI29


class TestDipolar:

    def test_along_field(self):
        d = 3.84
        expected = -2.0 * 1e-7 * GAMMA ** 2 * settings.HBAR / (d * 1e-10) ** 3
        assert secular_dipolar(GAMMA, GAMMA, (0, 0, d)) == pytest.approx(expected)

    def test_magic_angle(self):
        r = np.array([1.0, 1.0, 1.0])
        assert secular_dipolar(GAMMA, GAMMA, r, (0, 0, 1)) == pytest.approx(0.0, abs=1e-9)

    def test_tensor_reduction(self, rng):
        r = rng.normal(size=3) * 4.0
        b = rng.normal(size=3)
        tensor = dipolar_tensor(GAMMA, GAMMA, r)
        np.testing.assert_allclose(tensor, tensor.T)
        assert np.trace(tensor) == pytest.approx(0.0, abs=1e-9 * np.abs(tensor).max())
        assert secular_part(tensor, b) == pytest.approx(secular_dipolar(GAMMA, GAMMA, r, b))

    def test_zero_separation(self):
        with pytest.raises(InvalidArgumentError):
            secular_dipolar(GAMMA, GAMMA, (0, 0, 0))


class TestHyperfine:

    def test_envelope_scaling(self, bismuth, phosphorus):
        assert hyperfine_model_for(bismuth).n_factor == pytest.approx(math.sqrt(0.029 / 0.069))
        assert hyperfine_model_for(phosphorus).n_factor == pytest.approx(math.sqrt(0.029 / 0.044))

    def test_contact_decays(self, phosphorus):
        model = hyperfine_model_for(phosphorus)
        near = fermi_contact(model, settings.GAMMA_E, GAMMA, (5.43, 0, 0))
        far = fermi_contact(model, settings.GAMMA_E, GAMMA, (10 * 5.43, 0, 0))
        assert near > far >= 0

    def test_bismuth_contact_calibration(self, bismuth):
        model = hyperfine_model_for(bismuth)
        a0 = settings.LATTICE_A0
        axial = fermi_contact(model, bismuth.gamma_e, GAMMA, (0.0, 0.0, a0)) / (2 * math.pi)
        planar = fermi_contact(model, bismuth.gamma_e, GAMMA, (a0, a0, 0.0)) / (2 * math.pi)
        assert axial == pytest.approx(6.51e6, rel=1e-2)
        assert planar == pytest.approx(3.15e6, rel=1e-2)
        # both shells fall inside the 2-12 MHz ENDOR comb of Si:Bi
        for value in (axial, planar):
            assert 2e6 <= value <= 12e6

    def test_no_dipolar_term_inside_core(self, phosphorus):
        model = hyperfine_model_for(phosphorus)
        r = np.array([5.43, 5.43, 0.0])
        assert secular_hyperfine(model, settings.GAMMA_E, GAMMA, r) == pytest.approx(
            fermi_contact(model, settings.GAMMA_E, GAMMA, r))

    def test_rkky(self):
        assert rkky_correction(2e4, 3e4, settings.GAMMA_E, 0.3) == pytest.approx(6e8 / (settings.GAMMA_E * 0.3))
        with pytest.raises(InvalidArgumentError):
            rkky_correction(1.0, 1.0, settings.GAMMA_E, 0.0)


class TestRealisation:

    def test_bath_couplings(self, phosphorus, tmp_path):
        bath = random_bath(20.0, 0.1, seed=3)
        couplings = bath_couplings(bath, phosphorus, field=0.3)
        assert couplings.size == bath.size
        assert couplings.hyperfine.shape == (bath.size,)
        members = [0, 1, 2]
        matrix = cluster_dipolar(couplings, members)
        np.testing.assert_allclose(matrix, matrix.T)
        np.testing.assert_allclose(np.diag(matrix), 0.0)
        expected = secular_dipolar(GAMMA, GAMMA, couplings.positions[2] - couplings.positions[0])
        assert matrix[0, 2] == pytest.approx(expected)

        path = dump_couplings(bath, couplings, tmp_path / "couplings.csv")
        assert path.read_text().splitlines()[0] == "n1,n2,n3,distance_angstrom,J_Mrad_s"
