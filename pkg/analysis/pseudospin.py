"""Pair-correlation (pseudospin) theory of spin-bath decoherence.

A flip-flop pair in the bath basis {|du>, |ud>} evolves under
h_i = -C12/4 - (1/4)(C12 sx + z_i sz), conditional on the central state i,
with z_i = P_i dJ (+ electron and qubit-state detunings for nuclear qubits).
All coherences returned here follow L = <u| Tr_B rho(t) |l>, the same
convention as the cluster engine.
"""
import math
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import linalg

from analysis.spin_algebra import pauli_matrices
from config.settings import settings
from models.spin_models import CpmgAVector, PseudospinPair, SequenceKind, T2Estimate
from utils.exceptions import InvalidArgumentError
from utils.logging_config import logger

UPDOWN = "updown"
DOWNUP = "downup"

# Dipolar prefactor C(theta) in seconds for natural silicon, rotation angle in degrees
ORIENTATION_PREFACTORS = {0.0: 1.1e-3, 30.0: 0.45e-3, 55.0: 0.37e-3, 74.0: 0.39e-3, 90.0: 0.40e-3}


def _check_initial(initial: str) -> None:
    if initial not in (UPDOWN, DOWNUP):
        raise InvalidArgumentError(f"initial bath state must be '{UPDOWN}' or '{DOWNUP}', got {initial!r}")


def _times(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise InvalidArgumentError("times must be non-negative")
    return t


def _scalar_or_array(value, t):
    return value.item() if np.ndim(t) == 0 else value


# ---------------------------------------------------------------------------
# pseudospin parameters
# ---------------------------------------------------------------------------

def pair_detunings(pair: PseudospinPair) -> Tuple[float, float]:
    """Effective z-fields (z_u, z_l) of the two conditional pseudospins"""
    z_u = pair.p_u * pair.delta_j + pair.electron_detuning + pair.state_detuning
    z_l = pair.p_l * pair.delta_j + pair.electron_detuning - pair.state_detuning
    return z_u, z_l


def pair_frequencies(pair: PseudospinPair) -> Tuple[float, float, float, float]:
    """(omega_u, omega_l, theta_u, theta_l) with theta_i = atan2(C12, z_i)"""
    z_u, z_l = pair_detunings(pair)
    omega_u = 0.25 * math.hypot(pair.c12, z_u)
    omega_l = 0.25 * math.hypot(pair.c12, z_l)
    return omega_u, omega_l, math.atan2(pair.c12, z_u), math.atan2(pair.c12, z_l)


def folded_angles(pair: PseudospinPair) -> Tuple[float, float]:
    """Pseudofield angles folded into [-pi/2, pi/2] (atan(C12 / z_i))"""
    def fold(z):
        if z == 0:
            return math.copysign(math.pi / 2, pair.c12) if pair.c12 else 0.0
        return math.atan(pair.c12 / z)

    z_u, z_l = pair_detunings(pair)
    return fold(z_u), fold(z_l)


def conditional_hamiltonian(pair: PseudospinPair, branch: str) -> np.ndarray:
    """2x2 bath Hamiltonian conditional on central state 'u' or 'l'"""
    z_u, z_l = pair_detunings(pair)
    if branch not in ("u", "l"):
        raise InvalidArgumentError(f"branch must be 'u' or 'l', got {branch!r}")
    z = z_u if branch == "u" else z_l
    sx, _, sz = pauli_matrices()
    return -0.25 * pair.c12 * np.eye(2) - 0.25 * (pair.c12 * sx + z * sz)


def _dr_coefficients(theta_u: float, theta_l: float) -> Tuple[float, float, float, float]:
    theta_p = 0.5 * (theta_u + theta_l)
    theta_m = 0.5 * (theta_u - theta_l)
    d_plus = 0.5 * math.cos(theta_m) * (math.cos(theta_m) + math.cos(theta_p))
    d_minus = 0.5 * math.cos(theta_m) * (math.cos(theta_m) - math.cos(theta_p))
    r_plus = 0.5 * math.sin(theta_m) * (math.sin(theta_m) - math.sin(theta_p))
    r_minus = 0.5 * math.sin(theta_m) * (math.sin(theta_m) + math.sin(theta_p))
    return d_plus, d_minus, r_plus, r_minus


# ---------------------------------------------------------------------------
# free induction decay
# ---------------------------------------------------------------------------

def fid_pair_decay(pair: PseudospinPair, t, initial: str = UPDOWN):
    """Exact single-pair FID coherence.

    L = D+ e^{-i w- t} + D- e^{+i w- t} + R+ e^{-i w+ t} + R- e^{+i w+ t}
    for the bath starting in |ud>; the |du> start gives the conjugate.
    """
    _check_initial(initial)
    times = _times(t)
    omega_u, omega_l, theta_u, theta_l = pair_frequencies(pair)
    d_plus, d_minus, r_plus, r_minus = _dr_coefficients(theta_u, theta_l)
    w_plus, w_minus = omega_u + omega_l, omega_u - omega_l

    value = (d_plus * np.exp(-1j * w_minus * times) + d_minus * np.exp(1j * w_minus * times)
             + r_plus * np.exp(-1j * w_plus * times) + r_minus * np.exp(1j * w_plus * times))
    if initial == DOWNUP:
        value = np.conj(value)
    return _scalar_or_array(value, t)


def fid_fast_envelope(pair: PseudospinPair, t):
    """|L| keeping only the fast (w+) oscillations, folded angles"""
    times = _times(t)
    omega_u, omega_l, _, _ = pair_frequencies(pair)
    d_plus, d_minus, r_plus, r_minus = _dr_coefficients(*folded_angles(pair))
    w_plus = omega_u + omega_l
    squared = (1.0 - 4.0 * (d_plus + d_minus) * (r_plus + r_minus) * np.sin(0.5 * w_plus * times) ** 2
               - 4.0 * r_plus * r_minus * np.sin(w_plus * times) ** 2)
    return _scalar_or_array(np.sqrt(np.clip(squared, 0.0, None)), t)


def fid_slow_envelope(pair: PseudospinPair, t):
    """|L| keeping only the slow (w-) oscillations, folded angles"""
    times = _times(t)
    omega_u, omega_l, _, _ = pair_frequencies(pair)
    d_plus, d_minus, _, _ = _dr_coefficients(*folded_angles(pair))
    squared = 1.0 - 4.0 * d_plus * d_minus * np.sin((omega_u - omega_l) * times) ** 2
    return _scalar_or_array(np.sqrt(np.clip(squared, 0.0, None)), t)


def lz_envelope(pair: PseudospinPair, t):
    """|L| near a Landau-Zener point, driven by the state with the smaller |P|"""
    times = _times(t)
    omega_u, omega_l, _, _ = pair_frequencies(pair)
    theta_u, theta_l = folded_angles(pair)
    if abs(pair.p_u) <= abs(pair.p_l):
        theta, omega = theta_u, omega_u
    else:
        theta, omega = theta_l, omega_l
    squared = 1.0 - math.sin(theta) ** 2 * np.sin(omega * times) ** 2
    return _scalar_or_array(np.sqrt(np.clip(squared, 0.0, None)), t)


# ---------------------------------------------------------------------------
# Hahn echo and CPMG
# ---------------------------------------------------------------------------

def cpmg_a_vector(pair: PseudospinPair, tau) -> CpmgAVector:
    """Components of the one-cycle unitary T = A0 + i A.sigma for branch u"""
    taus = _times(tau)
    omega_u, omega_l, theta_u, theta_l = pair_frequencies(pair)
    cu, su = np.cos(omega_u * taus), np.sin(omega_u * taus)
    cl, sl = np.cos(omega_l * taus), np.sin(omega_l * taus)
    return CpmgAVector(
        a0=cu * cl - su * sl * math.cos(theta_u - theta_l),
        ax=sl * cu * math.sin(theta_l) + cl * su * math.sin(theta_u),
        ay=-su * sl * math.sin(theta_u - theta_l),
        az=sl * cu * math.cos(theta_l) + cl * su * math.cos(theta_u),
    )


def hahn_pair_decay(pair: PseudospinPair, t, initial: str = UPDOWN):
    """Exact Hahn-echo pair coherence at total time t = 2 tau.

    |L|^2 = 1 - 4 Ay^2 (A0^2 + Az^2); for |ud> L = 1 - 2Ay^2 + 2i Ax Ay.
    """
    _check_initial(initial)
    times = _times(t)
    a = cpmg_a_vector(pair, 0.5 * times)
    sign = 1.0 if initial == UPDOWN else -1.0
    value = 1.0 - 2.0 * a.ay ** 2 + 2j * sign * a.ax * a.ay
    return _scalar_or_array(np.asarray(value, dtype=complex), t)


def cpmg_even_decay(pair: PseudospinPair, pulses: int, t):
    """Real part of the CPMG-N pair coherence for even N, total time t = 2 N tau.

    L = 1 - 2Ay^2/(Ay^2 + A0^2) sin^2(N phi / 2), cos(phi) = 2(A0^2 + Ay^2) - 1.
    """
    if pulses < 2 or pulses % 2:
        raise InvalidArgumentError(f"even-pulse formula needs an even N >= 2, got {pulses}")
    times = _times(t)
    a = cpmg_a_vector(pair, times / (2.0 * pulses))
    q = a.a0 ** 2 + a.ay ** 2
    phi = np.arccos(np.clip(2.0 * q - 1.0, -1.0, 1.0))
    ratio = np.divide(2.0 * a.ay ** 2, q, out=np.zeros_like(q, dtype=float), where=q > 0)
    value = 1.0 - ratio * np.sin(0.5 * pulses * phi) ** 2
    return _scalar_or_array(np.asarray(value, dtype=float), t)


def cpmg_decay(pair: PseudospinPair, pulses: int, t, initial: str = UPDOWN):
    """Pair coherence for any CPMG-N (N = 0 is FID) by explicit unitary products"""
    _check_initial(initial)
    if pulses < 0:
        raise InvalidArgumentError(f"pulse count must be >= 0, got {pulses}")
    times = np.atleast_1d(_times(t))
    h = {"u": conditional_hamiltonian(pair, "u"), "l": conditional_hamiltonian(pair, "l")}
    psi = np.array([0.0, 1.0], dtype=complex) if initial == UPDOWN else np.array([1.0, 0.0], dtype=complex)
    other = {"u": "l", "l": "u"}

    values = np.empty(len(times), dtype=complex)
    for k, total in enumerate(times):
        if pulses == 0:
            w = {"u": linalg.expm(-1j * h["u"] * total), "l": linalg.expm(-1j * h["l"] * total)}
            values[k] = np.vdot(w["l"] @ psi, w["u"] @ psi)
            continue
        tau = total / (2.0 * pulses)
        step = {b: linalg.expm(-1j * h[b] * tau) for b in ("u", "l")}
        w, state = {}, {}
        for start in ("u", "l"):
            op, current = np.eye(2, dtype=complex), start
            for _ in range(pulses):
                op = step[current] @ op
                current = other[current]
                op = step[current] @ op
            w[start], state[start] = op, current
        # the branch ending in u supplies the ket of <u|rho|l>
        ket = w["u"] if state["u"] == "u" else w["l"]
        bra = w["l"] if state["u"] == "u" else w["u"]
        values[k] = np.vdot(bra @ psi, ket @ psi)
    return values[0] if np.ndim(t) == 0 else values


def nuclear_pair_decay(c12: float, electron_detuning: float, c1a: float, c2a: float, t,
                       initial: str = UPDOWN):
    """Hahn-echo pair coherence of a nuclear qubit with detunings Delta(+/-) = De +/- (C1A - C2A)"""
    pair = PseudospinPair(
        c12=c12, delta_j=0.0, p_u=0.0, p_l=0.0,
        electron_detuning=electron_detuning, state_detuning=c1a - c2a,
    )
    return hahn_pair_decay(pair, t, initial)


# ---------------------------------------------------------------------------
# T2 weights and the closed-form coherence time
# ---------------------------------------------------------------------------

def pair_t2_weight(pair: PseudospinPair) -> float:
    """1/T2 contribution: half the precession-radius difference times the mean rate"""
    omega_u, omega_l, _, _ = pair_frequencies(pair)
    theta_u, theta_l = folded_angles(pair)
    return 0.5 * abs(math.sin(theta_u) - math.sin(theta_l)) * 0.5 * (omega_u + omega_l)


def total_t2(weights: Iterable[float]) -> float:
    """Combine pair weights in quadrature: 1/T2^2 = sum (1/T2_n)^2"""
    weights = np.asarray(list(weights), dtype=float)
    if weights.size == 0 or not np.any(weights > 0):
        raise InvalidArgumentError("at least one positive weight is required")
    return float(1.0 / math.sqrt(np.sum(weights ** 2)))


def hahn_fid_factor(p_u: float, p_l: float) -> float:
    """Hahn/FID ratio of the closed form: larger near optimal working points"""
    if abs(p_u - p_l) < settings.HAHN_OWP_THRESHOLD * (abs(p_u) + abs(p_l)):
        return settings.HAHN_OWP_FACTOR
    return 1.0


def t2_formula(p_u: float, p_l: float, prefactor: float,
               sequence: Union[str, SequenceKind] = SequenceKind.FID, pulses: int = 1) -> T2Estimate:
    """T2 = C (|Pu| + |Pl|) / |Pu - Pl|, scaled for the Hahn echo (one pi pulse only)"""
    if prefactor <= 0:
        raise InvalidArgumentError(f"prefactor must be positive, got {prefactor}")
    sequence = SequenceKind(sequence)
    flags = []
    factor = hahn_fid_factor(p_u, p_l) if sequence == SequenceKind.CPMG and pulses == 1 else 1.0
    if factor != 1.0:
        flags.append(f"hahn_factor_threshold={settings.HAHN_OWP_THRESHOLD:g}")

    difference = abs(p_u - p_l)
    if difference == 0.0:
        flags.append("owp")
        t2 = math.inf
    else:
        t2 = factor * prefactor * (abs(p_u) + abs(p_l)) / difference
    return T2Estimate(t2=t2, prefactor=prefactor, hahn_factor=factor,
                      sequence=sequence.value, flags=flags)


def prefactor_from_shells(shells: Iterable[Tuple[float, float]]) -> float:
    """C = 4 / sqrt(sum_s N_s C_s^2) from (count, strength) shells"""
    total = sum(n * c ** 2 for n, c in shells)
    if total <= 0:
        raise InvalidArgumentError("shells carry no dipolar strength")
    return 4.0 / math.sqrt(total)


def prefactor_from_pairs(c12_values: Iterable[float]) -> float:
    return prefactor_from_shells((1, c) for c in c12_values)


def prefactor_for_angle(angle_deg: float) -> float:
    """Tabulated natural-silicon prefactor, linear in angle; 180 - theta mirrors theta"""
    if not 0.0 <= angle_deg <= 180.0:
        raise InvalidArgumentError(f"rotation angle must lie in [0, 180] degrees, got {angle_deg}")
    folded = angle_deg if angle_deg <= 90.0 else 180.0 - angle_deg
    angles = sorted(ORIENTATION_PREFACTORS)
    return float(np.interp(folded, angles, [ORIENTATION_PREFACTORS[a] for a in angles]))


def formula_decay(t, t2: float, exponent: float = 2.0):
    """exp(-(t/T2)^n); an infinite T2 gives a flat trace"""
    times = _times(t)
    if math.isinf(t2):
        return _scalar_or_array(np.ones_like(times), t)
    if t2 <= 0:
        raise InvalidArgumentError(f"T2 must be positive, got {t2}")
    return _scalar_or_array(np.exp(-(times / t2) ** exponent), t)


# ---------------------------------------------------------------------------
# realised pairs
# ---------------------------------------------------------------------------

def pairs_from_couplings(hyperfine: np.ndarray, dipolar: Dict[Tuple[int, int], float],
                         p_u: float, p_l: float, rkky_field: Optional[float] = None,
                         gamma_e: float = None) -> List[PseudospinPair]:
    """Pseudospin pairs for every (i, j) -> C_ij entry, optionally with the RKKY shift"""
    from analysis.couplings import rkky_correction

    pairs = []
    for (i, j), c12 in sorted(dipolar.items()):
        if rkky_field is not None:
            c12 = c12 + rkky_correction(hyperfine[i], hyperfine[j], gamma_e or settings.GAMMA_E, rkky_field)
        pairs.append(PseudospinPair(c12=c12, delta_j=float(hyperfine[i] - hyperfine[j]), p_u=p_u, p_l=p_l))
    return pairs


def weight_dump(pairs: Sequence[PseudospinPair], path: Union[str, Path],
                shell_ids: Sequence[int] = None) -> Path:
    """CSV of (dJ, C12, 1/T2^2, shell id); shells default to distinct |C12| ranks"""
    path = Path(path)
    c12 = np.array([p.c12 for p in pairs])
    if shell_ids is None:
        strengths = np.round(np.abs(c12), 6)
        ranks = {v: k + 1 for k, v in enumerate(sorted(set(strengths), reverse=True))}
        shell_ids = [ranks[v] for v in strengths]
    frame = pd.DataFrame({
        'delta_j': [p.delta_j for p in pairs],
        'c12': c12,
        'inv_t2_sq': [pair_t2_weight(p) ** 2 for p in pairs],
        'shell_id': list(shell_ids),
    })
    frame.to_csv(path, index=False, float_format='%.17g')
    logger.debug(f"Wrote {len(pairs)} pair weights to {path}")
    return path
