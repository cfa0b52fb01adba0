"""Pairwise interaction strengths: secular dipolar, Fermi contact, secular hyperfine, RKKY.

Positions come in angstrom and are converted to metres before any dipolar
evaluation. All returned couplings are angular frequencies (rad s^-1).
"""
import math
from pathlib import Path
from typing import Sequence, Union

import numpy as np
import pandas as pd

from config.settings import settings
from models.spin_models import BathCouplings, BathRealisation, DonorParameters, HyperfineModel
from utils.exceptions import InvalidArgumentError
from utils.logging_config import logger

ANGSTROM = 1e-10
Z_AXIS = np.array([0.0, 0.0, 1.0])


def _unit(direction: Sequence[float]) -> np.ndarray:
    v = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise InvalidArgumentError("field direction must be non-zero")
    return v / norm


def _dipolar_scale(gamma1: float, gamma2: float, r_m: np.ndarray) -> np.ndarray:
    return settings.MU0_OVER_4PI * gamma1 * gamma2 * settings.HBAR / r_m ** 3


def hyperfine_model_for(donor: DonorParameters, **overrides) -> HyperfineModel:
    """Envelope parameters with the donor-specific scaling n = sqrt(0.029 eV / eps)"""
    config = settings.get_hyperfine_config()
    config.update(overrides)
    n_factor = math.sqrt(settings.SHALLOW_DONOR_ENERGY / donor.ionization_energy)
    return HyperfineModel(n_factor=n_factor, **config)


def secular_dipolar(gamma1: float, gamma2: float, r: Sequence[float],
                    b_direction: Sequence[float] = Z_AXIS) -> float:
    """C = (mu0/4pi) g1 g2 hbar (1 - 3cos^2 theta) / r^3.

    Enters the Hamiltonian as C [Iz Iz - (I+ I- + I- I+)/4].
    """
    r = np.asarray(r, dtype=float)
    distance = np.linalg.norm(r)
    if distance == 0:
        raise InvalidArgumentError("dipolar coupling needs a non-zero separation")
    cos_theta = float(np.dot(r, _unit(b_direction))) / distance
    return float(_dipolar_scale(gamma1, gamma2, distance * ANGSTROM) * (1.0 - 3.0 * cos_theta ** 2))


def secular_dipolar_many(gamma1: float, gamma2: float, separations: np.ndarray,
                         b_direction: Sequence[float] = Z_AXIS) -> np.ndarray:
    """Vectorised secular_dipolar over an (..., 3) array of separations"""
    separations = np.asarray(separations, dtype=float)
    distance = np.linalg.norm(separations, axis=-1)
    if np.any(distance == 0):
        raise InvalidArgumentError("dipolar coupling needs non-zero separations")
    cos_theta = separations @ _unit(b_direction) / distance
    return _dipolar_scale(gamma1, gamma2, distance * ANGSTROM) * (1.0 - 3.0 * cos_theta ** 2)


def dipolar_tensor(gamma1: float, gamma2: float, r: Sequence[float]) -> np.ndarray:
    """Full point-dipole tensor D with H = I1 . D . I2 (symmetric, traceless)"""
    r = np.asarray(r, dtype=float)
    distance = np.linalg.norm(r)
    if distance == 0:
        raise InvalidArgumentError("dipolar coupling needs a non-zero separation")
    r_hat = r / distance
    return _dipolar_scale(gamma1, gamma2, distance * ANGSTROM) * (np.eye(3) - 3.0 * np.outer(r_hat, r_hat))


def secular_part(tensor: np.ndarray, b_direction: Sequence[float] = Z_AXIS) -> float:
    """Secular strength C of a dipolar tensor: its component along the field"""
    b = _unit(b_direction)
    return float(b @ np.asarray(tensor) @ b)


def envelope_functions(model: HyperfineModel, r: np.ndarray) -> np.ndarray:
    """(F1, F2, F3) in m^-3/2 at positions r (angstrom), stacked on the last axis"""
    r = np.asarray(r, dtype=float)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    na = model.n_factor * model.a
    nb = model.n_factor * model.b
    norm = math.sqrt(math.pi * (na * ANGSTROM) ** 2 * (nb * ANGSTROM))

    def f(u, v, w):
        return np.exp(-np.sqrt(u ** 2 / nb ** 2 + (v ** 2 + w ** 2) / na ** 2)) / norm

    return np.stack([f(x, y, z), f(y, z, x), f(z, x, y)], axis=-1)


def fermi_contact(model: HyperfineModel, gamma_e: float, gamma_n: float, r: Sequence[float]):
    """Isotropic contact coupling of the Kohn-Luttinger envelope.

    J_F = (4/9) eta gamma_e gamma_n hbar mu0 [F1 cos(k0 x) + F2 cos(k0 y) + F3 cos(k0 z)]^2,
    with the on-site charge density eta included as a multiplicative factor.
    Accepts a single position or an (..., 3) array.
    """
    r = np.asarray(r, dtype=float)
    envelopes = envelope_functions(model, r)
    bracket = np.sum(envelopes * np.cos(model.k0 * r), axis=-1)
    mu0 = 4.0 * math.pi * settings.MU0_OVER_4PI
    value = (4.0 / 9.0) * model.eta * gamma_e * gamma_n * settings.HBAR * mu0 * bracket ** 2
    return float(value) if value.ndim == 0 else value


def secular_hyperfine(model: HyperfineModel, gamma_e: float, gamma_n: float, r: Sequence[float],
                      b_direction: Sequence[float] = Z_AXIS):
    """Ising coefficient of Sz Iz: contact term minus the residual dipolar term beyond r0"""
    r = np.asarray(r, dtype=float)
    contact = fermi_contact(model, gamma_e, gamma_n, r)
    distance = np.linalg.norm(r, axis=-1)
    safe = np.where(distance > 0, distance, 1.0)
    cos_theta = (r @ _unit(b_direction)) / safe
    dipolar = _dipolar_scale(gamma_n, gamma_e, safe * ANGSTROM) * (1.0 - 3.0 * cos_theta ** 2)
    gate = np.heaviside(distance - model.r0, 0.0)
    value = contact - dipolar * gate
    return float(value) if np.ndim(value) == 0 else value


def rkky_correction(j1: float, j2: float, gamma_e: float, field: float) -> float:
    """Hyperfine-mediated flip-flop strength J1 J2 / (gamma_e B), added to C12"""
    if field <= 0:
        raise InvalidArgumentError(f"RKKY correction needs B > 0, got {field}")
    return j1 * j2 / (gamma_e * field)


# ---------------------------------------------------------------------------
# realisation-level couplings
# ---------------------------------------------------------------------------

def bath_couplings(bath: BathRealisation, donor: DonorParameters, model: HyperfineModel = None,
                   field: float = 0.0, b_direction: Sequence[float] = Z_AXIS,
                   gamma_n: float = None) -> BathCouplings:
    """Hyperfine vector of a realisation; dipolar pairs come from cluster_dipolar"""
    model = model or hyperfine_model_for(donor)
    gamma_n = settings.GAMMA_SI29 if gamma_n is None else gamma_n
    positions = bath.positions
    if bath.size:
        hyperfine = np.atleast_1d(secular_hyperfine(model, donor.gamma_e, gamma_n, positions, b_direction))
        contact = np.atleast_1d(fermi_contact(model, donor.gamma_e, gamma_n, positions))
    else:
        hyperfine = contact = np.zeros(0)
    logger.debug(f"Computed hyperfine couplings for {bath.size} bath spins")
    return BathCouplings(
        positions=positions, hyperfine=np.asarray(hyperfine, dtype=float),
        contact=np.asarray(contact, dtype=float),
        gamma_n=gamma_n, b_direction=_unit(b_direction), field=field,
    )


def cluster_dipolar(couplings: BathCouplings, members: Sequence[int]) -> np.ndarray:
    """Symmetric matrix of secular dipolar strengths among the cluster members"""
    members = list(members)
    positions = couplings.positions[members]
    k = len(members)
    matrix = np.zeros((k, k))
    if k < 2:
        return matrix
    upper = np.triu_indices(k, 1)
    separations = positions[upper[1]] - positions[upper[0]]
    values = secular_dipolar_many(couplings.gamma_n, couplings.gamma_n, separations, couplings.b_direction)
    matrix[upper] = values
    matrix[(upper[1], upper[0])] = values
    return matrix


def dump_couplings(bath: BathRealisation, couplings: BathCouplings, path: Union[str, Path]) -> Path:
    """CSV of site vectors and hyperfine couplings in M rad s^-1"""
    path = Path(path)
    frame = pd.DataFrame({
        'n1': bath.sites[:, 0], 'n2': bath.sites[:, 1], 'n3': bath.sites[:, 2],
        'distance_angstrom': np.linalg.norm(couplings.positions, axis=1),
        'J_Mrad_s': couplings.hyperfine / 1e6,
    })
    frame.to_csv(path, index=False, float_format='%.17g')
    return path
