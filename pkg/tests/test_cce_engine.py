import itertools
import math

import numpy as np
import pytest

from analysis.cce_engine import (
    CCEEngine, bath_product_state, cce_combine, central_system, convolve_field, enumerate_clusters,
    reduced_hamiltonian,
)
from analysis.couplings import cluster_dipolar
from analysis.donor_model import find_owp, polarisation
from analysis.pseudospin import UPDOWN, cpmg_decay, formula_decay, prefactor_for_angle, t2_formula
from models.spin_models import (
    AveragingMode, ClusterOptions, ClusterSet, CoherenceTrace, CutoffPolicy, PulseSequence, PseudospinPair,
    SequenceKind,
)
from utils.exceptions import InvalidArgumentError

TIMES = np.linspace(0.0, 2e-3, 9)
PURE = ClusterOptions(pure_dephasing=True)


def all_subsets(size):
    for k in range(1, size + 1):
        yield from itertools.combinations(range(size), k)


class TestClusterEnumeration:

    def setup_method(self):
        rng = np.random.Generator(np.random.PCG64(21))
        self.positions = rng.uniform(-15.0, 15.0, size=(25, 3))
        self.policy = CutoffPolicy(pair_separation_max=7.0, growth_separation_max=7.0,
                                   box_half_side=20.0, max_order=3, include_singles=True)

    def test_matches_connected_subsets(self):
        clusters = enumerate_clusters(self.positions, self.policy)
        close = {
            (i, j) for i, j in itertools.combinations(range(25), 2)
            if np.linalg.norm(self.positions[i] - self.positions[j]) <= 7.0
        }
        triples = {
            c for c in itertools.combinations(range(25), 3)
            if sum(pair in close for pair in itertools.combinations(c, 2)) >= 2
        }
        assert clusters.clusters[1] == [(i,) for i in range(25)]
        assert set(clusters.clusters[2]) == close
        assert set(clusters.clusters[3]) == triples
        assert clusters.clusters[2] == sorted(clusters.clusters[2])

    def test_box_excludes_outer_spins(self):
        positions = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [30.0, 0.0, 0.0], [31.0, 0.0, 0.0]])
        policy = CutoffPolicy(pair_separation_max=5.0, growth_separation_max=5.0, box_half_side=10.0)
        clusters = enumerate_clusters(positions, policy)
        assert clusters.clusters[2] == [(0, 1)]
        assert clusters.counts == {2: 1}

    def test_up_to(self):
        clusters = ClusterSet(clusters={1: [(0,), (1,)], 2: [(0, 1)], 3: []})
        assert clusters.up_to(1) == [(0,), (1,)]
        assert clusters.up_to(2) == [(0,), (1,), (0, 1)]


class TestClusterHamiltonian:

    def test_hermitian_and_sized(self, bismuth, small_bath):
        couplings = small_bath(3)
        central = central_system(bismuth, 0.3, 11, 10)
        h = reduced_hamiltonian(central, (0, 2), couplings)
        assert h.shape == (central.dimension * 4,) * 2
        np.testing.assert_allclose(h, h.conj().T)

    def test_truncated_basis_size(self, bismuth):
        # level 10 is the unmixed m = -5 state
        assert central_system(bismuth, 0.3, 11, 10).dimension == 3
        assert central_system(bismuth, 0.3, 11, 10, ClusterOptions(truncated_basis=False)).dimension == 20

    def test_flip_flop_terms_use_full_basis(self, bismuth):
        central = central_system(bismuth, 0.3, 11, 10, ClusterOptions(ising_only=False))
        assert central.dimension == 20
        assert central.s_plus is not None

    def test_pulse_swaps_levels(self, bismuth):
        central = central_system(bismuth, 0.3, 11, 10)
        np.testing.assert_allclose(central.pulse @ central.ket_u, central.ket_l, atol=1e-12)
        np.testing.assert_allclose(central.pulse.conj().T @ central.pulse, np.eye(central.dimension), atol=1e-12)

    def test_product_state(self):
        np.testing.assert_allclose(bath_product_state([1, -1]), [0, 1, 0, 0])

    def test_same_levels_rejected(self, bismuth):
        with pytest.raises(InvalidArgumentError):
            central_system(bismuth, 0.3, 10, 10)


class TestClusterCoherence:

    @pytest.mark.parametrize("sequence", [PulseSequence.fid(), PulseSequence.hahn()])
    def test_pair_matches_pseudospin(self, bismuth, small_bath, sequence):
        couplings = small_bath(2)
        field = 0.1
        engine = CCEEngine(bismuth, field, 11, 10, couplings, sequence, TIMES, PURE)
        pair = PseudospinPair(
            c12=cluster_dipolar(couplings, [0, 1])[0, 1],
            delta_j=couplings.hyperfine[0] - couplings.hyperfine[1],
            p_u=polarisation(bismuth, field, 11),
            p_l=polarisation(bismuth, field, 10),
        )
        expected = cpmg_decay(pair, sequence.pulses, TIMES, UPDOWN)
        np.testing.assert_allclose(engine.cluster_coherence((0, 1), [1, -1]), expected, atol=1e-9)

    @pytest.mark.parametrize("pulses", [2, 3])
    def test_cpmg_pair_matches_pseudospin(self, electron, small_bath, pulses):
        couplings = small_bath(2)
        sequence = PulseSequence(kind=SequenceKind.CPMG, pulses=pulses)
        engine = CCEEngine(electron, 0.3, 2, 1, couplings, sequence, TIMES, PURE)
        pair = PseudospinPair(c12=cluster_dipolar(couplings, [0, 1])[0, 1],
                              delta_j=couplings.hyperfine[0] - couplings.hyperfine[1], p_u=1.0, p_l=-1.0)
        np.testing.assert_allclose(engine.cluster_coherence((0, 1), [1, -1]),
                                   cpmg_decay(pair, pulses, TIMES, UPDOWN), atol=1e-9)

    def test_bare_electron_full_block(self, electron, small_bath):
        couplings = small_bath(2)
        engine = CCEEngine(electron, 0.01, 2, 1, couplings, PulseSequence.hahn(), TIMES)
        pair = PseudospinPair(c12=cluster_dipolar(couplings, [0, 1])[0, 1],
                              delta_j=couplings.hyperfine[0] - couplings.hyperfine[1], p_u=1.0, p_l=-1.0)
        np.testing.assert_allclose(engine.cluster_coherence((0, 1), [1, -1]),
                                   cpmg_decay(pair, 1, TIMES, UPDOWN), atol=1e-6)

    def test_truncated_equals_full_basis(self, bismuth, small_bath):
        couplings = small_bath(2)
        args = (bismuth, 0.05, 11, 10, couplings, PulseSequence.hahn(), TIMES)
        truncated = CCEEngine(*args, ClusterOptions(truncated_basis=True)).cluster_coherence((0, 1), [1, -1])
        full = CCEEngine(*args, ClusterOptions(truncated_basis=False)).cluster_coherence((0, 1), [1, -1])
        np.testing.assert_allclose(truncated, full, atol=1e-6)

    def test_starts_at_one(self, bismuth, small_bath):
        engine = CCEEngine(bismuth, 0.3, 11, 10, small_bath(3), PulseSequence.hahn(), TIMES)
        assert engine.cluster_coherence((0, 1, 2), [1, -1, 1])[0] == pytest.approx(1.0, abs=1e-9)

    def test_hahn_average_over_pair_states(self, electron, small_bath):
        couplings = small_bath(2)
        engine = CCEEngine(electron, 0.3, 2, 1, couplings, PulseSequence.hahn(), TIMES, PURE)
        flip_flop = engine.cluster_coherence((0, 1), [1, -1])
        average = engine.cluster_average((0, 1))
        np.testing.assert_allclose(average, 0.5 + 0.5 * flip_flop.real, atol=1e-10)
        np.testing.assert_allclose(engine.cluster_coherence((0, 1), [1, 1]), 1.0, atol=1e-10)

    def test_state_count_checked(self, electron, small_bath):
        engine = CCEEngine(electron, 0.3, 2, 1, small_bath(2), PulseSequence.hahn(), TIMES, PURE)
        with pytest.raises(InvalidArgumentError):
            engine.cluster_coherence((0, 1), [1])


class TestCombination:

    @pytest.mark.parametrize("size", [3, 4])
    @pytest.mark.parametrize("sequence", [PulseSequence.fid(), PulseSequence.hahn()])
    def test_full_expansion_is_exact(self, bismuth, rng, small_bath, size, sequence):
        for _ in range(5):
            couplings = small_bath(size)
            states = np.where(rng.random(size) < 0.5, 1, -1)
            engine = CCEEngine(bismuth, 0.1, 11, 10, couplings, sequence, TIMES, PURE)
            values = {c: engine.cluster_coherence(c, states[list(c)]) for c in all_subsets(size)}
            combined, divergent = cce_combine(values, size)
            assert not divergent
            np.testing.assert_allclose(combined, values[tuple(range(size))], atol=1e-8)

    def test_missing_subsets_count_as_one(self):
        value = np.array([1.0, 0.8 + 0.1j])
        combined, divergent = cce_combine({(0, 1): value}, 2)
        np.testing.assert_allclose(combined, value)
        assert not divergent

    def test_order_truncates(self):
        values = {(0,): np.array([0.9]), (1,): np.array([0.8]), (0, 1): np.array([0.5])}
        combined, _ = cce_combine(values, 1)
        np.testing.assert_allclose(combined, [0.72])

    def test_divergence_guard(self):
        values = {
            (0,): np.array([1.0, 1e-9]),
            (1,): np.array([1.0, 1.0]),
            (0, 1): np.array([1.0, 0.5]),
        }
        combined, divergent = cce_combine(values, 2)
        assert divergent
        assert np.all(np.abs(combined) <= 1.0)

    def test_small_product_of_healthy_factors_is_not_divergent(self):
        values = {
            (0,): np.array([1e-4]),
            (1,): np.array([1e-4]),
            (0, 1): np.array([1e-8]),
        }
        combined, divergent = cce_combine(values, 2)
        assert not divergent
        np.testing.assert_allclose(combined, [1e-8], rtol=1e-9)


class TestEngineRun:

    def test_all_states_run_matches_manual_product(self, electron, small_bath):
        couplings = small_bath(3)
        engine = CCEEngine(electron, 0.3, 2, 1, couplings, PulseSequence.hahn(), TIMES, PURE)
        clusters = ClusterSet(clusters={2: [(0, 1), (0, 2), (1, 2)]})
        trace = engine.run(clusters, 2)
        manual = np.ones(len(TIMES), dtype=complex)
        for c in clusters.clusters[2]:
            manual *= engine.cluster_average(c)
        np.testing.assert_allclose(trace.values, manual, atol=1e-12)
        assert trace.metadata["cce_order"] == 2
        assert trace.metadata["cluster_counts"] == {"2": 3}
        assert trace.metadata["sequence"] == "cpmg1"

    def test_threads_do_not_change_result(self, electron, small_bath):
        couplings = small_bath(4)
        clusters = enumerate_clusters(couplings.positions,
                                      CutoffPolicy(pair_separation_max=50.0, growth_separation_max=50.0,
                                                   box_half_side=50.0))
        serial = CCEEngine(electron, 0.3, 2, 1, couplings, PulseSequence.hahn(), TIMES, PURE, workers=1)
        threaded = CCEEngine(electron, 0.3, 2, 1, couplings, PulseSequence.hahn(), TIMES, PURE, workers=3)
        np.testing.assert_allclose(serial.run(clusters, 2).values, threaded.run(clusters, 2).values, atol=1e-12)

    def test_no_clusters_gives_unit_trace(self, electron, small_bath):
        engine = CCEEngine(electron, 0.3, 2, 1, small_bath(2), PulseSequence.fid(), TIMES, PURE)
        trace = engine.run(ClusterSet(clusters={}), 2)
        np.testing.assert_allclose(trace.values, 1.0)

    def test_sampled_states_are_reproducible(self, electron, small_bath):
        couplings = small_bath(3)
        engine = CCEEngine(electron, 0.3, 2, 1, couplings, PulseSequence.hahn(), TIMES, PURE)
        clusters = ClusterSet(clusters={2: [(0, 1), (1, 2)]})
        mode = AveragingMode.parse("sample:4")
        states = np.array([1, -1, 1])
        first = engine.run(clusters, 2, mode, bath_states=states, seed=8)
        second = engine.run(clusters, 2, mode, bath_states=states, seed=8)
        np.testing.assert_array_equal(first.values, second.values)
        assert first.metadata["averaging"] == "sample:4"
        with pytest.raises(InvalidArgumentError):
            engine.run(clusters, 2, mode)

    def test_rejects_negative_times(self, electron, small_bath):
        with pytest.raises(InvalidArgumentError):
            CCEEngine(electron, 0.3, 2, 1, small_bath(2), PulseSequence.fid(), [-1.0, 0.0])


class TestFieldConvolution:

    def test_zero_width_returns_centre(self):
        trace = convolve_field(lambda b: np.full(3, b), 0.2, 0.0, TIMES[:3])
        np.testing.assert_allclose(trace.values, 0.2)

    def test_linear_dependence_averages_to_centre(self):
        convolved = convolve_field(lambda b: np.array([1.0, b]), 0.2, 1e-3)
        np.testing.assert_allclose(convolved.values, [1.0, 0.2], atol=1e-12)

    def test_grid_and_quadrature_agree(self):
        def trace_at(b):
            return np.exp(-(TIMES / (1e-3 + 5.0 * (b - 0.2) ** 2)) ** 2)

        fields = np.linspace(0.19, 0.21, 801)
        grid = convolve_field({b: trace_at(b) for b in fields}, 0.2, 2e-3, TIMES)
        quadrature = convolve_field(trace_at, 0.2, 2e-3, TIMES)
        np.testing.assert_allclose(grid.values.real, quadrature.values.real, atol=1e-5)

    def test_grid_must_cover_three_widths(self):
        traces = {0.199: CoherenceTrace(times=TIMES, values=np.ones(9)),
                  0.201: CoherenceTrace(times=TIMES, values=np.ones(9))}
        with pytest.raises(InvalidArgumentError):
            convolve_field(traces, 0.2, 1e-3)

    def test_negative_width(self):
        with pytest.raises(InvalidArgumentError):
            convolve_field(lambda b: np.ones(2), 0.2, -1.0)

    def test_formula_decay_at_esr_owp(self, bismuth):
        # Gaussian field spread of 0.21 mT around the |14> -> |7> OWP, C(135 deg) prefactor
        times = np.linspace(0.0, 0.3, 3001)
        center = find_owp(bismuth, 14, 7)
        prefactor = prefactor_for_angle(135.0)

        def difference(b):
            return polarisation(bismuth, b, 14) - polarisation(bismuth, b, 7)

        def trace_at(b):
            estimate = t2_formula(polarisation(bismuth, b, 14), polarisation(bismuth, b, 7), prefactor)
            return formula_decay(times, estimate.t2)

        convolved = convolve_field(trace_at, center, 0.21e-3, times)
        decay = convolved.values.real
        assert np.all(np.diff(decay) < 0)
        one_over_e = float(np.interp(-math.exp(-1.0), -decay, times))
        assert one_over_e == pytest.approx(0.1, abs=0.01)

        # T2 = K / |B - B_owp| averages to (1 + 2 w^2 t^2 / K^2)^(-1/2)
        h = 1e-6
        slope = (difference(center + h) - difference(center - h)) / (2 * h)
        k = prefactor * 2 * abs(polarisation(bismuth, center, 14)) / abs(slope)
        expected = k / 0.21e-3 * math.sqrt((math.e ** 2 - 1) / 2)
        assert one_over_e == pytest.approx(expected, rel=1e-2)
