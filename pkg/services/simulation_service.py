import math
import time
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd

from analysis.cce_engine import CCEEngine, convolve_field, enumerate_clusters
from analysis.couplings import bath_couplings, hyperfine_model_for
from analysis.donor_model import (
    cancellation_resonances, esr_resonances, esr_transitions, find_all_clock_transitions,
    find_all_owps, get_donor, parse_transition, polarisation,
)
from analysis.fitting import fit_decay
from analysis.lattice import cells_for_radius, load_bath, random_bath, shell_census
from analysis.pseudospin import prefactor_for_angle, t2_formula
from analysis.spectra import TWO_PI, line_positions, load_endor_couplings, spectrum_frame, synthesize_spectrum
from config.settings import settings
from models.run_models import RunConfig
from models.spin_models import (
    BathRealisation, ClusterOptions, ClusterSet, CoherenceTrace, CutoffPolicy, DonorParameters, EndorCoupling,
)
from utils.exceptions import ConfigError, InvalidArgumentError, NumericalDivergenceError
from utils.logging_config import logger
from utils.output_manager import OutputManager


class SimulationService:
    """Runs one CLI command end to end and writes its outputs"""

    def __init__(self, config: RunConfig, output: OutputManager = None):
        self.config = config
        self.output = output or OutputManager(config.out, config.format.value)
        self.donor: DonorParameters = self._load_donor()

    def _load_donor(self) -> DonorParameters:
        try:
            return get_donor(self.config.donor, self.config.donor_file)
        except (KeyError, InvalidArgumentError) as e:
            raise ConfigError(f"unknown donor '{self.config.donor}': {e}") from e

    def _transition(self) -> Tuple[int, int]:
        if not self.config.transition:
            raise ConfigError("this command needs a transition")
        try:
            return parse_transition(self.donor, self.config.transition)
        except InvalidArgumentError as e:
            raise ConfigError(str(e)) from e

    def _name(self, default: str) -> str:
        return self.config.name or default

    # ------------------------------------------------------------------
    # decay
    # ------------------------------------------------------------------

    def _cutoff_policy(self) -> CutoffPolicy:
        config = self.config
        return CutoffPolicy(
            pair_separation_max=config.pair_cutoff_angstrom,
            growth_separation_max=config.growth_cutoff_angstrom or config.pair_cutoff_angstrom,
            box_half_side=config.box_half_side_angstrom,
            max_order=config.cce_order,
        )

    def _cluster_options(self) -> ClusterOptions:
        return ClusterOptions(ising_only=self.config.ising_only, truncated_basis=self.config.truncated_basis,
                              pure_dephasing=self.config.pure_dephasing)

    def _realisations(self) -> List[BathRealisation]:
        config = self.config
        if config.bath_file:
            return [load_bath(config.bath_file, abundance=config.abundance)]
        return [random_bath(config.box_half_side_angstrom, config.abundance, config.seed + k)
                for k in range(config.realisations)]

    def _bath_trace(self, bath: BathRealisation, field: float, u: int, l: int,
                    clusters: ClusterSet) -> CoherenceTrace:
        config = self.config
        model = hyperfine_model_for(self.donor)
        options = self._cluster_options()

        def at_field(b: float) -> CoherenceTrace:
            couplings = bath_couplings(bath, self.donor, model, b, config.b_direction)
            engine = CCEEngine(self.donor, b, u, l, couplings, config.pulse_sequence, config.times,
                               options, config.workers)
            return engine.run(clusters, config.cce_order, config.averaging,
                              bath_states=bath.initial_states, seed=bath.seed)

        centre = at_field(field)
        if config.convolve_mT <= 0:
            return centre
        flags = {'divergent': centre.divergent}

        def values_at(b: float) -> np.ndarray:
            trace = at_field(b)
            flags['divergent'] = flags['divergent'] or trace.divergent
            return trace.values

        convolved = convolve_field(values_at, field, config.convolve_mT * 1e-3, config.times,
                                   nodes=config.convolve_nodes)
        metadata = dict(centre.metadata)
        metadata.update(convolved.metadata)
        return CoherenceTrace(times=convolved.times, values=convolved.values,
                              metadata=metadata, divergent=flags['divergent'])

    def simulate(self, field: float) -> Dict[str, Any]:
        """Traces for every realisation at one field, plus their mean"""
        u, l = self._transition()
        policy = self._cutoff_policy()
        traces, counts = [], []
        for bath in self._realisations():
            clusters = enumerate_clusters(bath, policy)
            logger.info(f"Bath seed={bath.seed}: {bath.size} spins, clusters {clusters.counts}")
            traces.append(self._bath_trace(bath, field, u, l, clusters))
            counts.append(clusters.counts)
        mean = CoherenceTrace(
            times=traces[0].times,
            values=np.mean([t.values for t in traces], axis=0),
            metadata={'realisations': len(traces)},
            divergent=all(t.divergent for t in traces),
        )
        return {'transition': (u, l), 'traces': traces, 'mean': mean, 'cluster_counts': counts}

    def run_decay(self) -> Dict[str, Any]:
        start = time.time()
        config = self.config
        logger.info(f"Decay run: {self.donor.name} {config.transition} at {config.field_mT} mT, "
                    f"{config.pulse_sequence.label}, CCE{config.cce_order}, {config.realisations} realisation(s)")
        result = self.simulate(config.field)
        fit = self._safe_fit(result['mean'])
        wall = time.time() - start

        stem = self._name("decay")
        for k, (trace, counts) in enumerate(zip(result['traces'], result['cluster_counts'])):
            seed = trace.metadata.get('seed')
            metadata = self.output.provenance(config.echo(), seed, wall, counts,
                                              {'divergent': trace.divergent,
                                               'modulus_clamped': trace.metadata.get('modulus_clamped', False)})
            self.output.write_trace(f"{stem}_r{k:03d}", trace, metadata)
        mean_meta = self.output.provenance(
            config.echo(), config.seed, wall, self._total_counts(result['cluster_counts']),
            {'divergent': result['mean'].divergent},
            {'fit': fit.to_dict() if fit else None},
        )
        paths = self.output.write_trace(f"{stem}_mean", result['mean'], mean_meta)

        if all(t.divergent for t in result['traces']):
            raise NumericalDivergenceError("every realisation hit the divergence guard")
        logger.info(f"Decay run finished in {wall:.1f} s")
        return {'paths': paths, 'fit': fit, 'mean': result['mean']}

    @staticmethod
    def _total_counts(counts: List[Dict[int, int]]) -> Dict[str, int]:
        total: Dict[str, int] = {}
        for item in counts:
            for order, n in item.items():
                total[str(order)] = total.get(str(order), 0) + n
        return total

    def _safe_fit(self, trace: CoherenceTrace):
        try:
            return fit_decay(trace, smooth_window=self.config.smooth_window)
        except InvalidArgumentError as e:
            logger.warning(f"Skipping decay fit: {e}")
            return None

    # ------------------------------------------------------------------
    # T2 sweep
    # ------------------------------------------------------------------

    def run_t2_sweep(self) -> Dict[str, Any]:
        start = time.time()
        config = self.config
        u, l = self._transition()
        prefactor = prefactor_for_angle(config.angle_deg)
        rows, divergent, counts = [], [], []
        for field in config.sweep_fields:
            result = self.simulate(float(field))
            fit = self._safe_fit(result['mean'])
            p_u, p_l = polarisation(self.donor, field, u), polarisation(self.donor, field, l)
            formula = t2_formula(p_u, p_l, prefactor, config.sequence, config.pulses)
            divergent.append(result['mean'].divergent)
            counts.extend(result['cluster_counts'])
            rows.append({
                'field_mT': field * 1e3,
                't2_fit_s': fit.t2 if fit else math.nan,
                'n': fit.exponent if fit else math.nan,
                't2_prime_s': fit.t2_prime if fit else math.nan,
                'one_over_e_s': fit.one_over_e if fit else math.nan,
                't2_formula_s': formula.t2,
                'p_u': p_u,
                'p_l': p_l,
                'owp': 'owp' in formula.flags,
                'divergent': result['mean'].divergent,
            })
            logger.info(f"B={field * 1e3:.3f} mT: T2_fit={rows[-1]['t2_fit_s']:.4g} s, "
                        f"T2_formula={formula.t2:.4g} s")
        frame = pd.DataFrame(rows)
        wall = time.time() - start
        metadata = self.output.provenance(config.echo(), config.seed, wall, self._total_counts(counts),
                                          {'divergent': divergent, 'owp': list(frame['owp'])},
                                          {'prefactor_s': prefactor, 'transition': [u, l]})
        paths = self.output.write_table(self._name("t2_sweep"), frame, metadata)
        if divergent and all(divergent):
            raise NumericalDivergenceError("every sweep point hit the divergence guard")
        return {'paths': paths, 'table': frame}

    # ------------------------------------------------------------------
    # ENDOR
    # ------------------------------------------------------------------

    def _endor_couplings(self) -> List[EndorCoupling]:
        config = self.config
        fwhm = config.endor_fwhm_MHz * 1e6
        if config.endor_couplings_file:
            return load_endor_couplings(config.endor_couplings_file, fwhm)
        if config.a_iso_MHz is None:
            raise ConfigError("endor needs endor_couplings_file or a_iso_MHz")
        return [EndorCoupling(a_iso=TWO_PI * 1e6 * config.a_iso_MHz, t_aniso=TWO_PI * 1e6 * config.t_aniso_MHz,
                              fwhm=fwhm)]

    def run_endor(self) -> Dict[str, Any]:
        start = time.time()
        config = self.config
        u, l = self._transition()
        p_u, p_l = polarisation(self.donor, config.field, u), polarisation(self.donor, config.field, l)
        couplings = self._endor_couplings()
        gamma_n = settings.GAMMA_SI29
        theta = np.deg2rad(config.angle_deg)
        positions = np.array(line_positions(couplings, gamma_n, config.field, p_u, p_l, theta)).ravel()
        margin = 5.0 * config.endor_fwhm_MHz * 1e6
        grid = np.linspace(max(positions.min() - margin, 0.0), positions.max() + margin, config.endor_points)
        intensity = synthesize_spectrum(couplings, gamma_n, config.field, p_u, p_l, grid, theta)
        metadata = self.output.provenance(config.echo(), None, time.time() - start, None,
                                          {'owp': bool(abs(p_u - p_l) < 1e-9)},
                                          {'p_u': p_u, 'p_l': p_l, 'line_positions_Hz': positions.tolist()})
        paths = self.output.write_table(self._name("endor"), spectrum_frame(grid, intensity), metadata)
        logger.info(f"ENDOR spectrum with {len(couplings)} coupling(s) written")
        return {'paths': paths, 'grid': grid, 'intensity': intensity}

    # ------------------------------------------------------------------
    # lattice statistics
    # ------------------------------------------------------------------

    def run_lattice_stats(self) -> Dict[str, Any]:
        start = time.time()
        config = self.config
        cells = cells_for_radius(config.radius_angstrom)
        census = shell_census(cells, config.abundance, config.field_restricted)
        frame = pd.DataFrame({
            'multiplicity': list(census.shell_counts),
            'shells': [census.shell_counts[k] for k in census.shell_counts],
            'mean_pairs_per_shell': [census.expected_pairs[k] for k in census.shell_counts],
            'pairs': [census.expected_pairs[k] * census.shell_counts[k] for k in census.shell_counts],
            'density_per_cell': [census.density[k] for k in census.shell_counts],
        })
        metadata = self.output.provenance(config.echo(), None, time.time() - start, None, None,
                                          {'cells': cells, 'total_pairs': census.total_pairs,
                                           'total_density': census.total_density})
        paths = self.output.write_table(self._name("lattice_stats"), frame, metadata)
        logger.info(f"Census N={cells}: {census.total_pairs:.0f} equivalent pairs")
        return {'paths': paths, 'census': census}

    # ------------------------------------------------------------------
    # special fields
    # ------------------------------------------------------------------

    def run_owp(self) -> Dict[str, Any]:
        start = time.time()
        config = self.config
        transitions = [self._transition()] if config.transition else esr_transitions(self.donor)
        rows = []
        for u, l in transitions:
            rows.extend({'kind': 'owp', 'u': u, 'l': l, 'm': math.nan, 'field_mT': b * 1e3}
                        for b in find_all_owps(self.donor, u, l))
            rows.extend({'kind': 'clock', 'u': u, 'l': l, 'm': math.nan, 'field_mT': b * 1e3}
                        for b in find_all_clock_transitions(self.donor, u, l))
        for m, b in cancellation_resonances(self.donor).items():
            rows.append({'kind': 'cancellation', 'u': 0, 'l': 0, 'm': m, 'field_mT': b * 1e3})
        frame = pd.DataFrame(rows, columns=['kind', 'u', 'l', 'm', 'field_mT'])
        owp_count = int((frame['kind'] == 'owp').sum())
        if owp_count == 0:
            logger.warning(f"No optimal working points found for {self.donor.name}")
        metadata = self.output.provenance(config.echo(), None, time.time() - start, None,
                                          {'owp_found': owp_count > 0})
        paths = self.output.write_table(self._name("owp"), frame, metadata)
        return {'paths': paths, 'table': frame}

    def run_resonances(self) -> Dict[str, Any]:
        start = time.time()
        config = self.config
        found = esr_resonances(self.donor, config.frequency_GHz * 1e9)
        frame = pd.DataFrame([{'field_mT': b * 1e3, 'u': u, 'l': l} for b, u, l in found],
                             columns=['field_mT', 'u', 'l'])
        metadata = self.output.provenance(config.echo(), None, time.time() - start)
        paths = self.output.write_table(self._name("resonances"), frame, metadata)
        return {'paths': paths, 'table': frame}
