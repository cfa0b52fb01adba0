"""Cluster correlation expansion for a donor transition in a nuclear spin bath.

Each cluster is solved exactly: the donor block (full, truncated or
conditional) is coupled to the cluster spins, the pulse sequence is applied
to every time column at once, and the donor coherence <u|Tr_B rho|l> is
normalised by the bath-free run. Cluster results are combined by the
recursive CCE product in canonical cluster order.
"""
import itertools
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, spatial

from analysis.couplings import cluster_dipolar
from analysis.donor_model import (
    adiabatic_vector, donor_hamiltonian, polarisation, resolve_state, zeeman_support,
)
from analysis.spin_algebra import build_spin_operators, eigendecompose, embed, product_space, propagate, reduced_coherence
from config.settings import settings
from models.spin_models import (
    AveragingKind, AveragingMode, BathCouplings, BathRealisation, CentralSystem, ClusterOptions,
    ClusterSet, CoherenceTrace, CutoffPolicy, DonorParameters, PulseSequence, SequenceKind,
)
from utils.exceptions import InvalidArgumentError
from utils.logging_config import logger

Cluster = Tuple[int, ...]

_HALF = build_spin_operators(0.5)
_UP = np.array([1.0, 0.0], dtype=complex)
_DOWN = np.array([0.0, 1.0], dtype=complex)


# ---------------------------------------------------------------------------
# clusters
# ---------------------------------------------------------------------------

def enumerate_clusters(bath: Union[BathRealisation, np.ndarray], policy: CutoffPolicy) -> ClusterSet:
    """Pairs within the pair cutoff, grown one spin at a time within the growth cutoff.

    Indices refer to the bath ordering; only spins inside the box take part.
    """
    positions = bath.positions if isinstance(bath, BathRealisation) else np.asarray(bath, dtype=float)
    if positions.size == 0:
        return ClusterSet(clusters={})
    inside = np.flatnonzero(np.all(np.abs(positions) <= policy.box_half_side + 1e-9, axis=1))
    local = positions[inside]

    clusters: Dict[int, List[Cluster]] = {}
    if policy.include_singles:
        clusters[1] = [(int(i),) for i in inside]
    if policy.max_order >= 2 and len(inside) >= 2:
        tree = spatial.cKDTree(local)
        pairs = sorted((int(inside[a]), int(inside[b])) for a, b in tree.query_pairs(policy.pair_separation_max))
        clusters[2] = pairs

        if policy.max_order >= 3:
            neighbours = {
                int(inside[k]): {int(inside[j]) for j in found if j != k}
                for k, found in enumerate(tree.query_ball_point(local, policy.growth_separation_max))
            }
            current = pairs
            for order in range(3, policy.max_order + 1):
                grown = set()
                for cluster in current:
                    members = set(cluster)
                    candidates = set().union(*(neighbours[m] for m in cluster)) - members
                    for n in candidates:
                        grown.add(tuple(sorted(members | {n})))
                current = sorted(grown)
                clusters[order] = current

    result = ClusterSet(clusters=clusters)
    logger.info(f"Enumerated clusters per order: {result.counts}")
    return result


# ---------------------------------------------------------------------------
# cluster Hamiltonians
# ---------------------------------------------------------------------------

def central_system(donor: DonorParameters, field: float, u: int, l: int,
                   options: ClusterOptions = None) -> CentralSystem:
    """Donor block, projected Sz (and S+ for flip-flop hyperfine) and the pi pulse"""
    options = options or ClusterOptions()
    u_state, l_state = resolve_state(donor, u), resolve_state(donor, l)
    if u_state.index == l_state.index:
        raise InvalidArgumentError("transition levels must differ")

    if options.pure_dephasing:
        pols = [polarisation(donor, field, u_state), polarisation(donor, field, l_state)]
        # the u/l splitting commutes with every cluster term and cancels against the reference
        hamiltonian = np.zeros((2, 2), dtype=complex)
        sz = np.diag([0.5 * p for p in pols]).astype(complex)
        s_plus = None
        ket_u, ket_l = _UP.copy(), _DOWN.copy()
        indices = ()
    else:
        nuclear = build_spin_operators(donor.spin_host)
        space = product_space([2, nuclear.dimension])
        full_h = donor_hamiltonian(donor, field)
        full_sz = embed(_HALF.sz, 0, space)
        full_sp = embed(_HALF.s_plus, 0, space)
        truncated = options.truncated_basis and options.ising_only
        if options.truncated_basis and not options.ising_only:
            logger.warning("Flip-flop hyperfine terms leave the truncated basis; using the full donor basis")
        if truncated:
            indices = tuple(sorted(set(zeeman_support(donor, u_state)) | set(zeeman_support(donor, l_state))))
        else:
            indices = tuple(range(donor.dimension))
        select = np.ix_(indices, indices)
        hamiltonian, sz = full_h[select], full_sz[select]
        s_plus = None if options.ising_only else full_sp[select]
        ket_u = adiabatic_vector(donor, field, u_state)[list(indices)]
        ket_l = adiabatic_vector(donor, field, l_state)[list(indices)]

    dim = hamiltonian.shape[0]
    pulse = (np.eye(dim, dtype=complex) - np.outer(ket_u, ket_u.conj()) - np.outer(ket_l, ket_l.conj())
             + np.outer(ket_u, ket_l.conj()) + np.outer(ket_l, ket_u.conj()))
    return CentralSystem(hamiltonian=hamiltonian, sz=sz, s_plus=s_plus, ket_u=ket_u, ket_l=ket_l,
                         pulse=pulse, basis_indices=indices)


def reduced_hamiltonian(central: CentralSystem, members: Sequence[int], couplings: BathCouplings,
                        options: ClusterOptions = None) -> np.ndarray:
    """H_donor + sum J_n Sz Iz_n (+ contact flip-flops) + secular dipolar pairs; no bath Zeeman"""
    options = options or ClusterOptions()
    members = list(members)
    if not members:
        raise InvalidArgumentError("cluster must contain at least one bath spin")
    space = product_space([central.dimension] + [2] * len(members))
    h = embed(central.hamiltonian, 0, space)
    sz_c = embed(central.sz, 0, space)
    flip_flops = central.s_plus is not None and not options.pure_dephasing
    if flip_flops:
        if couplings.contact is None:
            raise InvalidArgumentError("flip-flop hyperfine terms need contact couplings")
        sp_c = embed(central.s_plus, 0, space)
        sm_c = sp_c.conj().T

    iz, ip, im = [], [], []
    for slot, n in enumerate(members, start=1):
        iz.append(embed(_HALF.sz, slot, space))
        ip.append(embed(_HALF.s_plus, slot, space))
        im.append(embed(_HALF.s_minus, slot, space))
        h = h + couplings.hyperfine[n] * (sz_c @ iz[-1])
        if flip_flops:
            h = h + 0.5 * couplings.contact[n] * (sp_c @ im[-1] + sm_c @ ip[-1])

    dipolar = cluster_dipolar(couplings, members)
    for a, b in itertools.combinations(range(len(members)), 2):
        c = dipolar[a, b]
        h = h + c * (iz[a] @ iz[b] - 0.25 * (ip[a] @ im[b] + im[a] @ ip[b]))
    return h


def bath_product_state(states: Sequence[int]) -> np.ndarray:
    vec = np.ones(1, dtype=complex)
    for s in states:
        vec = np.kron(vec, _UP if s > 0 else _DOWN)
    return vec


def evolve_sequence(eig, sequence: PulseSequence, psi0: np.ndarray, times: np.ndarray,
                    pulse: np.ndarray, d_central: int, ket_u: np.ndarray, ket_l: np.ndarray) -> np.ndarray:
    """Unnormalised <u|Tr_B rho(t)|l> after FID or CPMG-N, one column per time"""
    times = np.asarray(times, dtype=float)
    states = np.repeat(psi0[:, np.newaxis], len(times), axis=1)
    if sequence.kind == SequenceKind.FID:
        states = propagate(eig, states, times)
    else:
        tau = times / (2.0 * sequence.pulses)
        for _ in range(sequence.pulses):
            states = propagate(eig, states, tau)
            states = pulse @ states
            states = propagate(eig, states, tau)
    return reduced_coherence(states, d_central, ket_u, ket_l)


# ---------------------------------------------------------------------------
# combination
# ---------------------------------------------------------------------------

def cce_combine(cluster_coherences: Mapping[Cluster, np.ndarray], order: int,
                threshold: float = None) -> Tuple[np.ndarray, bool]:
    """Product of reduced correlations L~_C = L_C / prod_{Q < C} L~_Q over |C| <= order.

    Subsets absent from the mapping count as 1. Any sub-cluster L~_Q whose
    modulus falls below the threshold is replaced by the threshold (phase
    kept), the quotient is clamped to modulus <= 1 and the result is flagged
    divergent.
    """
    threshold = settings.DIVERGENCE_THRESHOLD if threshold is None else threshold
    ordered = sorted((c for c in cluster_coherences if len(c) <= order), key=lambda c: (len(c), c))
    if not ordered:
        return np.ones(0, dtype=complex), False

    tildes: Dict[Cluster, np.ndarray] = {}
    divergent = False
    for cluster in ordered:
        value = np.asarray(cluster_coherences[cluster], dtype=complex)
        denominator = np.ones_like(value)
        small = np.zeros(value.shape, dtype=bool)
        for size in range(1, len(cluster)):
            for sub in itertools.combinations(cluster, size):
                if sub not in tildes:
                    continue
                factor = tildes[sub]
                below = np.abs(factor) < threshold
                small |= below
                denominator = denominator * np.where(below, threshold * np.exp(1j * np.angle(factor)), factor)
        tilde = value / denominator
        if np.any(small):
            divergent = True
            modulus = np.abs(tilde)
            tilde = np.where(small & (modulus > 1.0), tilde / np.where(modulus > 0, modulus, 1.0), tilde)
            logger.warning(f"Clamped divergent reduced correlation for cluster {cluster}")
        tildes[cluster] = tilde

    product = np.ones_like(tildes[ordered[0]])
    for cluster in ordered:
        product = product * tildes[cluster]
    return product, divergent


# ---------------------------------------------------------------------------
# engine
# ---------------------------------------------------------------------------

class CCEEngine:
    """Cluster coherences of one donor transition at fixed field and sequence"""

    def __init__(self, donor: DonorParameters, field: float, u: int, l: int,
                 couplings: BathCouplings, sequence: PulseSequence, times: Sequence[float],
                 options: ClusterOptions = None, workers: int = None):
        self.donor = donor
        self.field = field
        self.u = resolve_state(donor, u).index
        self.l = resolve_state(donor, l).index
        self.couplings = couplings
        self.sequence = sequence
        self.times = np.asarray(times, dtype=float)
        if self.times.ndim != 1 or np.any(self.times < 0):
            raise InvalidArgumentError("times must be a 1-D array of non-negative values")
        self.options = options or ClusterOptions()
        self.workers = max(1, int(workers or settings.WORKERS))
        self.central = central_system(donor, field, self.u, self.l, self.options)
        self._reference = self._donor_only()

    def _superposition(self) -> np.ndarray:
        return (self.central.ket_u + self.central.ket_l) / np.sqrt(2.0)

    def _donor_only(self) -> np.ndarray:
        eig = eigendecompose(self.central.hamiltonian)
        return evolve_sequence(eig, self.sequence, self._superposition(), self.times,
                               self.central.pulse, self.central.dimension,
                               self.central.ket_u, self.central.ket_l)

    def cluster_coherence(self, members: Cluster, states: Sequence[int]) -> np.ndarray:
        """Normalised coherence with the cluster in one product state (+1 up, -1 down)"""
        if len(states) != len(members):
            raise InvalidArgumentError("one initial state per cluster member is required")
        h = reduced_hamiltonian(self.central, members, self.couplings, self.options)
        eig = eigendecompose(h)
        psi0 = np.kron(self._superposition(), bath_product_state(states))
        pulse = np.kron(self.central.pulse, np.eye(2 ** len(members)))
        raw = evolve_sequence(eig, self.sequence, psi0, self.times, pulse,
                              self.central.dimension, self.central.ket_u, self.central.ket_l)
        return raw / self._reference

    def cluster_average(self, members: Cluster, coherent: bool = True) -> np.ndarray:
        """Mean over every non-interacting product state of the cluster"""
        values = [self.cluster_coherence(members, states)
                  for states in itertools.product((1, -1), repeat=len(members))]
        stacked = np.array(values)
        return stacked.mean(axis=0) if coherent else np.abs(stacked).mean(axis=0).astype(complex)

    def _map(self, func: Callable, items: List) -> List:
        if self.workers == 1 or len(items) < 2:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as executor:
            return list(executor.map(func, items))

    def run(self, clusters: ClusterSet, order: int, averaging: AveragingMode = None,
            bath_states: Optional[np.ndarray] = None, seed: Optional[int] = None) -> CoherenceTrace:
        """CCE trace of the given order under the requested bath-state averaging"""
        averaging = averaging or AveragingMode()
        selected = clusters.up_to(order)
        logger.info(f"Running CCE{order} over {len(selected)} clusters ({averaging.label}, "
                    f"{self.sequence.label}, B={self.field:.6g} T)")

        if averaging.kind == AveragingKind.ALL:
            coherences = self._map(lambda c: self.cluster_average(c, averaging.coherent), selected)
            values, divergent = cce_combine(dict(zip(selected, coherences)), order)
        else:
            if bath_states is None:
                raise InvalidArgumentError("sampled averaging needs the realisation's bath states")
            bath_states = np.asarray(bath_states)
            rng = np.random.Generator(np.random.PCG64(seed))
            samples, divergent = [], False
            for k in range(averaging.samples):
                states = bath_states if k == 0 else np.where(rng.random(len(bath_states)) < 0.5, 1, -1)
                coherences = self._map(lambda c: self.cluster_coherence(c, states[list(c)]), selected)
                sample, flagged = cce_combine(dict(zip(selected, coherences)), order)
                samples.append(sample)
                divergent = divergent or flagged
            stacked = np.array(samples)
            values = stacked.mean(axis=0) if averaging.coherent else np.abs(stacked).mean(axis=0).astype(complex)

        if not selected:
            values = np.ones(len(self.times), dtype=complex)
        metadata = {
            "donor": self.donor.name,
            "field_T": self.field,
            "transition": [self.u, self.l],
            "sequence": self.sequence.label,
            "cce_order": order,
            "cluster_counts": {str(k): v for k, v in clusters.counts.items() if k <= order},
            "averaging": averaging.label,
            "coherent": averaging.coherent,
            "options": self.options.model_dump(),
            "seed": seed,
        }
        modulus = np.abs(values)
        if np.any(modulus > 1.0 + 1e-9):
            values = np.where(modulus > 1.0, values / np.where(modulus > 0, modulus, 1.0), values)
            metadata["modulus_clamped"] = True
        return CoherenceTrace(times=self.times.copy(), values=values, metadata=metadata, divergent=divergent)


def average_bath_states(engine: CCEEngine, clusters: ClusterSet, order: int, mode: AveragingMode,
                        bath_states: Optional[np.ndarray] = None, seed: Optional[int] = None) -> CoherenceTrace:
    return engine.run(clusters, order, mode, bath_states=bath_states, seed=seed)


# ---------------------------------------------------------------------------
# inhomogeneous field distribution
# ---------------------------------------------------------------------------

def convolve_field(traces: Union[Mapping[float, np.ndarray], Callable[[float], np.ndarray]],
                   center: float, width: float, times: Optional[np.ndarray] = None,
                   nodes: int = 64) -> CoherenceTrace:
    """Gaussian (standard deviation ``width``) average of L_B(t) over the field.

    ``traces`` is either a field -> trace mapping integrated by the trapezoid
    rule, or a callable evaluated at Gauss-Hermite nodes.
    """
    if width < 0:
        raise InvalidArgumentError(f"field width must be non-negative, got {width}")

    if callable(traces):
        if width == 0:
            values = np.asarray(traces(center), dtype=complex)
        else:
            x, w = np.polynomial.hermite.hermgauss(nodes)
            samples = np.array([np.asarray(traces(center + np.sqrt(2.0) * width * xk), dtype=complex) for xk in x])
            values = (w[:, np.newaxis] * samples).sum(axis=0) / np.sqrt(np.pi)
        times = np.arange(len(values), dtype=float) if times is None else np.asarray(times, dtype=float)
        return CoherenceTrace(times=times, values=values,
                              metadata={"convolution_T": width, "center_T": center, "method": "gauss-hermite"})

    fields = np.array(sorted(traces), dtype=float)
    stack = np.array([np.asarray(traces[b].values if isinstance(traces[b], CoherenceTrace) else traces[b],
                                 dtype=complex) for b in fields])
    if times is None:
        first = traces[fields[0]]
        times = first.times if isinstance(first, CoherenceTrace) else np.arange(stack.shape[1], dtype=float)
    if width == 0:
        values = np.array([np.interp(center, fields, stack[:, k].real) + 1j * np.interp(center, fields, stack[:, k].imag)
                           for k in range(stack.shape[1])])
    else:
        if fields[0] > center - 3.0 * width or fields[-1] < center + 3.0 * width:
            raise InvalidArgumentError("traces must cover at least +/-3 widths around the center field")
        g = np.exp(-0.5 * ((fields - center) / width) ** 2)
        values = integrate.trapezoid(g[:, np.newaxis] * stack, fields, axis=0) / integrate.trapezoid(g, fields)
    return CoherenceTrace(times=np.asarray(times, dtype=float), values=values,
                          metadata={"convolution_T": width, "center_T": center, "method": "trapezoid"})
