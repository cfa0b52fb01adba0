"""Central-spin Hamiltonian of a Group V donor and its closed-form eigensystem.

Zeeman product basis: electron (m_S = +1/2, -1/2) in slot 0, host nucleus
(m_I = I ... -I) in slot 1. Level labels i = 1..d ascend in energy and map
to adiabatic labels |+,m> (i = 3I - S + 2 + m) and |-,m> (i = S + I - m).
"""
import configparser
import math
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy import optimize

from analysis.spin_algebra import build_spin_operators, embed, product_space
from config.settings import settings
from models.spin_models import AdiabaticState, BranchSign, DonorParameters, DoubletSolution
from utils.exceptions import InvalidArgumentError
from utils.logging_config import logger

ELECTRON_SPIN = 0.5
MRAD = 1e6

StateRef = Union[int, AdiabaticState]


# ---------------------------------------------------------------------------
# donor table
# ---------------------------------------------------------------------------

def load_donor_file(path: Union[str, Path] = None) -> Dict[str, DonorParameters]:
    """Read a sectioned key-value donor file (M rad s^-1 units, eV)"""
    path = Path(path or settings.DONOR_FILE)
    if not path.exists():
        raise InvalidArgumentError(f"donor file not found: {path}")

    parser = configparser.ConfigParser()
    parser.read(path, encoding='utf-8')
    donors = {}
    for section in parser.sections():
        entry = parser[section]
        try:
            donors[section] = DonorParameters(
                name=section,
                gamma_e=float(entry.get('gamma_e', settings.GAMMA_E / MRAD)) * MRAD,
                gamma_host=float(entry['gamma_host']) * MRAD,
                spin_host=float(Fraction(entry['spin_host'])),
                hyperfine_A=float(entry['hyperfine_A']) * MRAD,
                ionization_energy=float(entry['ionization_energy']),
            )
        except (KeyError, ValueError) as e:
            raise InvalidArgumentError(f"bad donor entry [{section}] in {path}: {e}") from e
    logger.debug(f"Loaded {len(donors)} donors from {path}")
    return donors


def get_donor(name: str, path: Union[str, Path] = None) -> DonorParameters:
    if name in ("e", "electron"):
        return bare_electron()
    donors = load_donor_file(path)
    if name not in donors:
        raise InvalidArgumentError(f"unknown donor '{name}', available: {sorted(donors)}")
    return donors[name]


def bare_electron(hyperfine_A: float = 1e9) -> DonorParameters:
    """Spin-zero host: a two-level electron with unmixed states"""
    return DonorParameters(
        name="e",
        gamma_e=settings.GAMMA_E,
        gamma_host=0.0,
        spin_host=0.0,
        hyperfine_A=hyperfine_A,
        ionization_energy=0.044,
    )


# ---------------------------------------------------------------------------
# labels
# ---------------------------------------------------------------------------

def state_from_index(p: DonorParameters, i: int) -> AdiabaticState:
    d = p.dimension
    if not 1 <= i <= d:
        raise InvalidArgumentError(f"level index {i} outside 1..{d}")
    two_i = int(round(2 * p.spin_host))
    sign = BranchSign.PLUS if i >= two_i + 2 else BranchSign.MINUS
    m = abs(two_i + 1 - i) - ELECTRON_SPIN - p.spin_host
    return AdiabaticState(sign=sign, m=m, index=i)


def index_from_state(p: DonorParameters, sign: Union[str, BranchSign], m: float) -> int:
    sign = BranchSign(sign)
    spin = p.spin_host
    if sign == BranchSign.PLUS:
        valid = -(spin - 0.5) <= m <= spin + 0.5
        i = 3 * spin - ELECTRON_SPIN + 2 + m
    else:
        valid = -(spin + 0.5) <= m <= spin - 0.5
        i = ELECTRON_SPIN + spin - m
    offset = m + spin + ELECTRON_SPIN
    if not valid or abs(offset - round(offset)) > 1e-12:
        raise InvalidArgumentError(f"no adiabatic state |{sign.value},{m}> for I={spin}")
    return int(round(i))


def resolve_state(p: DonorParameters, ref: StateRef) -> AdiabaticState:
    if isinstance(ref, AdiabaticState):
        return ref
    return state_from_index(p, int(ref))


def parse_transition(p: DonorParameters, text: str) -> Tuple[int, int]:
    """Parse '12-9', '12,9' or '+,-3:-,-4' into (u, l) level indices"""
    text = text.strip()
    try:
        if ':' in text:
            parts = []
            for label in text.split(':'):
                sign, m = label.strip().strip('|>').split(',')
                parts.append(index_from_state(p, sign.strip(), float(Fraction(m.strip()))))
            u, l = parts
        else:
            u, l = (int(x) for x in text.replace(',', '-').split('-') if x.strip())
    except (ValueError, TypeError) as e:
        raise InvalidArgumentError(f"cannot parse transition '{text}'") from e
    for i in (u, l):
        state_from_index(p, i)
    if u == l:
        raise InvalidArgumentError("transition levels must differ")
    return u, l


def esr_transitions(p: DonorParameters) -> List[Tuple[int, int]]:
    """Dipole-allowed |+,m> <-> |-,m-1> pairs, i.e. i <-> d+1-i"""
    d = p.dimension
    return [(u, d + 1 - u) for u in range(d, d // 2, -1)]


# ---------------------------------------------------------------------------
# Hamiltonian and eigensystem
# ---------------------------------------------------------------------------

def donor_hamiltonian(p: DonorParameters, B: float) -> np.ndarray:
    """gamma_e B Sz + gamma_X B Iz + A I.S in the Zeeman product basis"""
    if B < 0:
        raise InvalidArgumentError(f"field must be non-negative, got {B}")
    s_ops = build_spin_operators(ELECTRON_SPIN)
    i_ops = build_spin_operators(p.spin_host)
    space = product_space([2, i_ops.dimension])

    def both(a, b):
        return embed(a, 0, space) @ embed(b, 1, space)

    h = p.gamma_e * B * embed(s_ops.sz, 0, space) + p.gamma_host * B * embed(i_ops.sz, 1, space)
    h = h + p.hyperfine_A * (both(s_ops.sx, i_ops.sx) + both(s_ops.sy, i_ops.sy) + both(s_ops.sz, i_ops.sz))
    return h


def doublet_solution(p: DonorParameters, B: float, m: float) -> DoubletSolution:
    """Closed form for the constant-m block; edge blocks are unmixed"""
    spin = p.spin_host
    w0 = p.gamma_e * B / p.hyperfine_A
    omega = m + w0 * (1.0 - p.delta)
    delta_sq = max((spin + 0.5) ** 2 - m * m, 0.0)
    epsilon = 0.5 * (1.0 - 4.0 * w0 * m * p.delta)

    if abs(abs(m) - (spin + 0.5)) < 1e-12:
        # single Zeeman state: keep R signed so E± = (A/2)(-eps ± Omega)
        theta, R, a, b, Delta = 0.0, omega, 1.0, 0.0, 0.0
    else:
        Delta = math.sqrt(delta_sq)
        R = math.hypot(omega, Delta)
        theta = math.atan2(Delta, omega)
        a, b = math.cos(theta / 2.0), math.sin(theta / 2.0)

    half_a = 0.5 * p.hyperfine_A
    return DoubletSolution(
        m=m, a=a, b=b, theta=theta, R=R, Omega=omega, Delta=Delta, epsilon=epsilon,
        energy_plus=half_a * (-epsilon + R),
        energy_minus=half_a * (-epsilon - R),
    )


def mixing_angle(p: DonorParameters, B: float, m: float) -> float:
    return doublet_solution(p, B, m).theta


def analytic_eigensystem(p: DonorParameters, B: float) -> List[Tuple[AdiabaticState, DoubletSolution]]:
    if B < 0:
        raise InvalidArgumentError(f"field must be non-negative, got {B}")
    result = []
    for i in range(1, p.dimension + 1):
        state = state_from_index(p, i)
        result.append((state, doublet_solution(p, B, state.m)))
    return result


def level_energy(p: DonorParameters, B: float, ref: StateRef) -> float:
    state = resolve_state(p, ref)
    sol = doublet_solution(p, B, state.m)
    return sol.energy_plus if state.sign == BranchSign.PLUS else sol.energy_minus


def level_energies(p: DonorParameters, B: float) -> np.ndarray:
    return np.array([level_energy(p, B, i) for i in range(1, p.dimension + 1)])


def polarisation(p: DonorParameters, B: float, ref: StateRef) -> float:
    """P_i = 2<i|Sz|i> = ±cos(theta_m)"""
    state = resolve_state(p, ref)
    cos_theta = math.cos(doublet_solution(p, B, state.m).theta)
    return cos_theta if state.sign == BranchSign.PLUS else -cos_theta


def nuclear_projection(p: DonorParameters, B: float, ref: StateRef) -> float:
    """<i|Iz|i> = m - P_i / 2"""
    state = resolve_state(p, ref)
    return state.m - 0.5 * polarisation(p, B, state)


def adiabatic_vector(p: DonorParameters, B: float, ref: StateRef) -> np.ndarray:
    """Eigenvector of level i in the Zeeman product basis"""
    state = resolve_state(p, ref)
    sol = doublet_solution(p, B, state.m)
    n_dim = int(round(2 * p.spin_host)) + 1
    vec = np.zeros(2 * n_dim, dtype=complex)

    def zeeman_index(m_s: float, m_i: float) -> Optional[int]:
        k = p.spin_host - m_i
        if m_i < -p.spin_host - 1e-12 or m_i > p.spin_host + 1e-12:
            return None
        return (0 if m_s > 0 else 1) * n_dim + int(round(k))

    upper = zeeman_index(0.5, state.m - 0.5)
    lower = zeeman_index(-0.5, state.m + 0.5)
    if state.sign == BranchSign.PLUS:
        coeffs = ((upper, sol.a), (lower, sol.b))
    else:
        coeffs = ((upper, -sol.b), (lower, sol.a))
    for idx, c in coeffs:
        if idx is not None:
            vec[idx] += c
    return vec


def zeeman_support(p: DonorParameters, ref: StateRef) -> List[int]:
    """Zeeman basis indices spanning the doublet that contains level i"""
    state = resolve_state(p, ref)
    n_dim = int(round(2 * p.spin_host)) + 1
    support = []
    for m_s, m_i in ((0.5, state.m - 0.5), (-0.5, state.m + 0.5)):
        if -p.spin_host - 1e-12 <= m_i <= p.spin_host + 1e-12:
            support.append((0 if m_s > 0 else 1) * n_dim + int(round(p.spin_host - m_i)))
    return support


def doublet_partner(p: DonorParameters, ref: StateRef) -> Optional[int]:
    state = resolve_state(p, ref)
    other = BranchSign.MINUS if state.sign == BranchSign.PLUS else BranchSign.PLUS
    try:
        return index_from_state(p, other, state.m)
    except InvalidArgumentError:
        return None


# ---------------------------------------------------------------------------
# transitions
# ---------------------------------------------------------------------------

def transition_frequency(p: DonorParameters, B: float, u: StateRef, l: StateRef) -> float:
    """|E_u - E_l| / 2pi in Hz"""
    return abs(level_energy(p, B, u) - level_energy(p, B, l)) / (2.0 * math.pi)


def df_dB(p: DonorParameters, B: float, u: StateRef, l: StateRef) -> float:
    """Frequency-field gradient in Hz/T from Hellmann-Feynman expectation values"""
    u_state, l_state = resolve_state(p, u), resolve_state(p, l)
    if u_state.index == l_state.index:
        raise InvalidArgumentError("transition levels must differ")
    sign = math.copysign(1.0, level_energy(p, B, u_state) - level_energy(p, B, l_state))
    gradient = (
        0.5 * p.gamma_e * (polarisation(p, B, u_state) - polarisation(p, B, l_state))
        + p.gamma_host * (nuclear_projection(p, B, u_state) - nuclear_projection(p, B, l_state))
    )
    return sign * gradient / (2.0 * math.pi)


def transition_amplitude(p: DonorParameters, B: float, u: StateRef, l: StateRef) -> float:
    """|<u|Sx|l>| from the analytic eigenvectors"""
    u_state, l_state = resolve_state(p, u), resolve_state(p, l)
    if u_state.index == l_state.index:
        raise InvalidArgumentError("transition levels must differ")
    sx = embed(build_spin_operators(ELECTRON_SPIN).sx, 0,
               product_space([2, int(round(2 * p.spin_host)) + 1]))
    vu, vl = adiabatic_vector(p, B, u_state), adiabatic_vector(p, B, l_state)
    return float(abs(np.vdot(vu, sx @ vl)))


def rabi_probability(nu1: float, nu, nuB: float, t, t0: float = 0.0):
    """Transition probability (nu1/nu_r)^2 sin^2(pi nu_r (t - t0))"""
    if nu1 <= 0:
        raise InvalidArgumentError(f"Rabi drive nu1 must be positive, got {nu1}")
    nu_r = np.sqrt(nu1 ** 2 + (np.asarray(nu) - nuB) ** 2)
    prob = (nu1 / nu_r) ** 2 * np.sin(np.pi * nu_r * (np.asarray(t) - t0)) ** 2
    return float(prob) if np.ndim(prob) == 0 else prob


# ---------------------------------------------------------------------------
# field finders
# ---------------------------------------------------------------------------

def _scan_roots(func: Callable[[float], float], bracket: Tuple[float, float], step: float) -> List[float]:
    lo, hi = bracket
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise InvalidArgumentError(f"invalid field bracket {bracket}")
    n = max(int(math.ceil((hi - lo) / step)), 1)
    grid = np.linspace(lo, hi, n + 1)
    values = np.array([func(b) for b in grid])
    roots = []
    for k in range(n):
        f0, f1 = values[k], values[k + 1]
        if f0 == 0.0:
            if k == 0 or values[k - 1] != 0.0:
                roots.append(float(grid[k]))
            continue
        if f0 * f1 < 0:
            roots.append(float(optimize.brentq(func, grid[k], grid[k + 1],
                                               xtol=settings.ROOT_XTOL, rtol=4 * np.finfo(float).eps)))
    if values[-1] == 0.0 and (n == 0 or values[-2] != 0.0):
        roots.append(float(grid[-1]))
    return roots


def find_all_owps(p: DonorParameters, u: StateRef, l: StateRef,
                  bracket: Tuple[float, float] = None, step: float = None) -> List[float]:
    bracket = bracket or (0.0, settings.FIELD_SCAN_MAX)
    step = step or settings.FIELD_SCAN_STEP
    return _scan_roots(lambda b: polarisation(p, b, u) - polarisation(p, b, l), bracket, step)


def find_owp(p: DonorParameters, u: StateRef, l: StateRef,
             bracket: Tuple[float, float] = None, step: float = None) -> Optional[float]:
    """First field in the bracket where P_u = P_l, or None"""
    roots = find_all_owps(p, u, l, bracket, step)
    if not roots:
        logger.debug(f"No OWP for {p.name} {u}->{l} in bracket {bracket}")
        return None
    return roots[0]


def find_all_clock_transitions(p: DonorParameters, u: StateRef, l: StateRef,
                               bracket: Tuple[float, float] = None, step: float = None) -> List[float]:
    bracket = bracket or (settings.FIELD_SCAN_STEP, settings.FIELD_SCAN_MAX)
    step = step or settings.FIELD_SCAN_STEP
    return _scan_roots(lambda b: df_dB(p, b, u, l), bracket, step)


def find_clock_transition(p: DonorParameters, u: StateRef, l: StateRef,
                          bracket: Tuple[float, float] = None, step: float = None) -> Optional[float]:
    """First field where df/dB = 0, or None"""
    roots = find_all_clock_transitions(p, u, l, bracket, step)
    return roots[0] if roots else None


def cancellation_resonance(p: DonorParameters, m: float) -> float:
    """Field where Omega_m vanishes, B = -m A / (gamma_e (1 - delta))"""
    if not (-(p.spin_host - 0.5) - 1e-12 <= m <= 1e-12) or abs(2 * m - round(2 * m)) > 1e-12:
        raise InvalidArgumentError(f"m={m} has no cancellation resonance for I={p.spin_host}")
    return -m * p.hyperfine_A / (p.gamma_e * (1.0 - p.delta))


def cancellation_resonances(p: DonorParameters) -> Dict[float, float]:
    """All cancellation fields keyed by m"""
    spin = p.spin_host
    ms = [-(spin - 0.5) + k for k in range(int(round(spin - 0.5)) + 1)] if spin >= 0.5 else []
    return {m: cancellation_resonance(p, m) for m in ms if m <= 0}


def resonance_fields(p: DonorParameters, u: StateRef, l: StateRef, frequency: float,
                     bracket: Tuple[float, float] = None, step: float = None) -> List[float]:
    """Fields where the u-l transition frequency equals ``frequency`` (Hz)"""
    bracket = bracket or (step or settings.FIELD_SCAN_STEP, settings.FIELD_SCAN_MAX)
    step = step or settings.FIELD_SCAN_STEP
    return _scan_roots(lambda b: transition_frequency(p, b, u, l) - frequency, bracket, step)


def esr_resonances(p: DonorParameters, frequency: float,
                   bracket: Tuple[float, float] = None, step: float = None) -> List[Tuple[float, int, int]]:
    """All dipole-allowed resonances at a fixed microwave frequency, sorted by field"""
    found = []
    for u, l in esr_transitions(p):
        for b in resonance_fields(p, u, l, frequency, bracket, step):
            found.append((b, u, l))
    found.sort()
    logger.info(f"{p.name}: {len(found)} ESR resonances at {frequency / 1e9:.4f} GHz")
    return found
