"""ENDOR line positions and Gaussian spectrum synthesis.

Frequencies are returned in Hz; couplings are angular (rad s^-1). A bath
nucleus sees the donor electron through its polarisation P_i, so each
coupling gives one line per donor level.
"""
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from models.spin_models import EndorCoupling
from utils.exceptions import InvalidArgumentError

TWO_PI = 2.0 * np.pi
_FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


def _check_field(field: float) -> None:
    if field < 0:
        raise InvalidArgumentError(f"field must be non-negative, got {field}")


def endor_resonance_iso(gamma_n: float, field: float, a_iso: float, polarisation: float) -> float:
    """|gamma_n B + a_iso P / 2| / 2pi"""
    _check_field(field)
    return abs(gamma_n * field + 0.5 * a_iso * polarisation) / TWO_PI


def _aniso_components(gamma_n, field, a_iso, t_aniso, theta, polarisation, theta0):
    angle = np.asarray(theta, dtype=float) - theta0
    alpha = a_iso - t_aniso + 3.0 * t_aniso * np.cos(angle) ** 2
    beta = 3.0 * t_aniso * np.sin(angle) * np.cos(angle)
    return gamma_n * field + 0.5 * alpha * polarisation, 0.5 * beta * polarisation


def endor_resonance_aniso(gamma_n: float, field: float, a_iso: float, t_aniso: float, theta,
                          polarisation: float, theta0: float = 0.0):
    """Line position for an axial hyperfine tensor at angle theta - theta0 to the field.

    The parallel and perpendicular couplings are a_iso + 2T and a_iso - T.
    """
    _check_field(field)
    parallel, transverse = _aniso_components(gamma_n, field, a_iso, t_aniso, theta, polarisation, theta0)
    value = np.hypot(parallel, transverse) / TWO_PI
    return float(value) if np.ndim(value) == 0 else value


def endor_block_hamiltonian(gamma_n: float, field: float, a_iso: float, t_aniso: float, theta: float,
                            polarisation: float, theta0: float = 0.0) -> np.ndarray:
    """Nuclear spin-1/2 Hamiltonian within one donor level (rad s^-1)"""
    parallel, transverse = _aniso_components(gamma_n, field, a_iso, t_aniso, theta, polarisation, theta0)
    return 0.5 * np.array([[parallel, transverse], [transverse, -parallel]], dtype=float)


def endor_resonance_numeric(gamma_n: float, field: float, a_iso: float, t_aniso: float, theta: float,
                            polarisation: float, theta0: float = 0.0) -> float:
    levels = np.linalg.eigvalsh(endor_block_hamiltonian(gamma_n, field, a_iso, t_aniso, theta,
                                                        polarisation, theta0))
    return float(levels[-1] - levels[0]) / TWO_PI


def line_positions(couplings: Iterable[EndorCoupling], gamma_n: float, field: float,
                   p_u: float, p_l: float, theta: float = 0.0) -> List[Tuple[float, float]]:
    """(upper-level, lower-level) line positions for each coupling"""
    positions = []
    for c in couplings:
        positions.append((
            endor_resonance_aniso(gamma_n, field, c.a_iso, c.t_aniso, theta, p_u, c.theta0),
            endor_resonance_aniso(gamma_n, field, c.a_iso, c.t_aniso, theta, p_l, c.theta0),
        ))
    return positions


def synthesize_spectrum(couplings: Sequence[EndorCoupling], gamma_n: float, field: float,
                        p_u: float, p_l: float, grid: np.ndarray, theta: float = 0.0) -> np.ndarray:
    """Sum of equal-width Gaussians, each of area ``amplitude``, per Hz of ``grid``"""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or np.any(np.diff(grid) < 0):
        raise InvalidArgumentError("frequency grid must be a sorted 1-D array")
    intensity = np.zeros_like(grid)
    for coupling, (f_u, f_l) in zip(couplings, line_positions(couplings, gamma_n, field, p_u, p_l, theta)):
        sigma = coupling.fwhm * _FWHM_TO_SIGMA
        intensity += coupling.amplitude * (stats.norm.pdf(grid, f_u, sigma) + stats.norm.pdf(grid, f_l, sigma))
    return intensity


def spectrum_frame(grid: np.ndarray, intensity: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({'frequency_MHz': np.asarray(grid) / 1e6, 'intensity': np.asarray(intensity)})


def load_endor_couplings(path: Union[str, Path], fwhm: float = None) -> List[EndorCoupling]:
    """Couplings from CSV with columns a_iso_MHz[, t_aniso_MHz, amplitude, theta0_deg]"""
    frame = pd.read_csv(path)
    if 'a_iso_MHz' not in frame.columns:
        raise InvalidArgumentError(f"coupling file {path} needs an a_iso_MHz column")
    couplings = []
    for row in frame.to_dict('records'):
        kwargs = dict(
            a_iso=TWO_PI * 1e6 * float(row['a_iso_MHz']),
            t_aniso=TWO_PI * 1e6 * float(row.get('t_aniso_MHz', 0.0) or 0.0),
            amplitude=float(row.get('amplitude', 1.0)),
            theta0=np.deg2rad(float(row.get('theta0_deg', 0.0) or 0.0)),
        )
        if fwhm is not None:
            kwargs['fwhm'] = fwhm
        couplings.append(EndorCoupling(**kwargs))
    return couplings
