#!/usr/bin/env python3
"""
Donor Decoherence v1.0
Spin-bath decoherence of donor qubits in silicon: cluster-correlation decays,
closed-form T2 sweeps, ENDOR spectra, lattice statistics and special fields.
"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3

COMMANDS = {
    'decay': 'run_decay',
    't2-sweep': 'run_t2_sweep',
    'endor': 'run_endor',
    'lattice-stats': 'run_lattice_stats',
    'owp': 'run_owp',
    'resonances': 'run_resonances',
}

# flag dest -> run config key
FLAG_KEYS: Dict[str, str] = {
    'donor': 'donor',
    'donor_file': 'donor_file',
    'transition': 'transition',
    'field_mT': 'field_mT',
    'field_start_mT': 'field_start_mT',
    'field_stop_mT': 'field_stop_mT',
    'field_steps': 'field_steps',
    'angle_deg': 'angle_deg',
    'sequence': 'sequence',
    'pulses': 'pulses',
    'cce_order': 'cce_order',
    'box_angstrom': 'box_half_side_angstrom',
    'pair_cutoff_angstrom': 'pair_cutoff_angstrom',
    'growth_cutoff_angstrom': 'growth_cutoff_angstrom',
    'abundance': 'abundance',
    'seed': 'seed',
    'realisations': 'realisations',
    'bath_file': 'bath_file',
    'average': 'average',
    'convolve_mT': 'convolve_mT',
    't_max_us': 't_max_us',
    'time_points': 'time_points',
    'ising_only': 'ising_only',
    'radius_angstrom': 'radius_angstrom',
    'frequency_GHz': 'frequency_GHz',
    'a_iso_MHz': 'a_iso_MHz',
    't_aniso_MHz': 't_aniso_MHz',
    'endor_couplings_file': 'endor_couplings_file',
    'workers': 'workers',
    'out': 'out',
    'format': 'format',
    'name': 'name',
}


def build_parser() -> argparse.ArgumentParser:
    from models.run_models import CONFIG_KEYS

    keys = "\n".join(f"  {key:<26} {text}" for key, text in CONFIG_KEYS.items())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', type=Path, help='run config file (key = value, [sections])')
    common.add_argument('--donor', help='donor name: P, As, Sb, Bi, e')
    common.add_argument('--donor-file', dest='donor_file', type=Path, help='donor parameter file')
    common.add_argument('--transition', help="levels u-l, e.g. 11-10 or '+,4:-,4'")
    common.add_argument('--field-mT', dest='field_mT', type=float, help='static field, mT')
    common.add_argument('--field-start-mT', dest='field_start_mT', type=float, help='sweep start, mT')
    common.add_argument('--field-stop-mT', dest='field_stop_mT', type=float, help='sweep stop, mT')
    common.add_argument('--field-steps', dest='field_steps', type=int, help='sweep points')
    common.add_argument('--angle-deg', dest='angle_deg', type=float, help='field angle from [001], degrees')
    common.add_argument('--sequence', choices=['fid', 'cpmg'], help='pulse sequence')
    common.add_argument('--pulses', type=int, help='CPMG pulse count (1 = Hahn)')
    common.add_argument('--cce-order', dest='cce_order', type=int, help='maximum cluster size')
    common.add_argument('--box-angstrom', dest='box_angstrom', type=float, help='bath box half side, angstrom')
    common.add_argument('--pair-cutoff-angstrom', dest='pair_cutoff_angstrom', type=float,
                        help='pair separation cutoff, angstrom')
    common.add_argument('--growth-cutoff-angstrom', dest='growth_cutoff_angstrom', type=float,
                        help='cluster growth cutoff, angstrom')
    common.add_argument('--abundance', type=float, help='29Si fraction')
    common.add_argument('--seed', type=int, help='base RNG seed')
    common.add_argument('--realisations', type=int, help='bath realisations')
    common.add_argument('--bath-file', dest='bath_file', type=Path, help='fixed bath CSV')
    common.add_argument('--average', help='all or sample:n')
    common.add_argument('--convolve-mT', dest='convolve_mT', type=float, help='field inhomogeneity width, mT')
    common.add_argument('--t-max-us', dest='t_max_us', type=float, help='last time point, microseconds')
    common.add_argument('--time-points', dest='time_points', type=int, help='number of time points')
    common.add_argument('--ising-only', dest='ising_only', action=argparse.BooleanOptionalAction, default=None,
                        help='drop flip-flop hyperfine terms')
    common.add_argument('--radius-angstrom', dest='radius_angstrom', type=float, help='census radius, angstrom')
    common.add_argument('--frequency-GHz', dest='frequency_GHz', type=float, help='microwave frequency, GHz')
    common.add_argument('--a-iso-MHz', dest='a_iso_MHz', type=float, help='ENDOR isotropic coupling, MHz')
    common.add_argument('--t-aniso-MHz', dest='t_aniso_MHz', type=float, help='ENDOR anisotropic coupling, MHz')
    common.add_argument('--endor-couplings-file', dest='endor_couplings_file', type=Path,
                        help='ENDOR couplings CSV')
    common.add_argument('--workers', type=int, help='threads for cluster evaluation')
    common.add_argument('--out', type=Path, help='output directory')
    common.add_argument('--format', choices=['csv', 'json'], help='output format')
    common.add_argument('--name', help='output file stem')
    common.add_argument('--log-level', dest='log_level', help='DEBUG, INFO, WARNING, ERROR')

    parser = argparse.ArgumentParser(
        prog='donor-decoherence',
        description='Spin-bath decoherence of donor qubits in silicon',
        epilog=f"run config keys (units in the names):\n{keys}",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest='command', required=True)
    helps = {
        'decay': 'CCE coherence decay per realisation plus the mean trace',
        't2-sweep': 'fitted and closed-form T2 over a field grid',
        'endor': 'synthetic ENDOR spectrum',
        'lattice-stats': 'equivalent-pair census within a radius',
        'owp': 'optimal working points, clock transitions and cancellation resonances',
        'resonances': 'ESR resonance fields at a microwave frequency',
    }
    for command, text in helps.items():
        sub.add_parser(command, parents=[common], help=text, epilog=f"run config keys:\n{keys}",
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, object]:
    return {key: getattr(args, dest, None) for dest, key in FLAG_KEYS.items()}


def main(argv: Optional[List[str]] = None) -> int:
    """Main application entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)

    from utils.logging_config import logger, setup_logging
    from utils.exceptions import ConfigError, NumericalDivergenceError

    if args.log_level:
        setup_logging(args.log_level)

    code = EXIT_OK
    try:
        from models.run_models import build_run_config
        from services.simulation_service import SimulationService

        logger.info(f"Starting donor-decoherence {args.command}")
        config = build_run_config(args.config, overrides_from_args(args))
        service = SimulationService(config)
        result = getattr(service, COMMANDS[args.command])()
        for kind, path in result.get('paths', {}).items():
            print(f"{kind}: {path}")

    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        logger.error(f"Configuration error: {e}")
        code = EXIT_CONFIG
    except NumericalDivergenceError as e:
        print(f"Numerical divergence: {e}", file=sys.stderr)
        logger.error(f"All results diverged: {e}")
        code = EXIT_DIVERGENCE
    except KeyboardInterrupt:
        print("Run interrupted by user")
        code = EXIT_FAILURE
    except Exception as e:
        print(f"Error: {e}", file=sys.stderr)
        logger.error(f"Command {args.command} failed: {e}", exc_info=True)
        code = EXIT_FAILURE
    finally:
        logger.info("Application shutdown")
    return code


if __name__ == "__main__":
    sys.exit(main())
