import math
import os
from pathlib import Path
from typing import Any, Dict

from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Settings:
    """Simulation settings, physical constants and runtime paths"""

    VERSION: str = "1.0.0"

    # Physical constants (SI)
    HBAR: float = float(os.getenv("HBAR", "1.054571817e-34"))
    MU0_OVER_4PI: float = float(os.getenv("MU0_OVER_4PI", "1e-7"))

    # Gyromagnetic ratios, rad s^-1 T^-1
    GAMMA_E: float = float(os.getenv("GAMMA_E", "1.7591e11"))
    GAMMA_SI29: float = float(os.getenv("GAMMA_SI29", "53.1903e6"))

    # Silicon crystal
    LATTICE_A0: float = float(os.getenv("LATTICE_A0", "5.43"))  # angstrom
    SI29_ABUNDANCE: float = float(os.getenv("SI29_ABUNDANCE", "0.0467"))

    # Kohn-Luttinger hyperfine envelope
    HYPERFINE_ETA: float = float(os.getenv("HYPERFINE_ETA", "186"))
    HYPERFINE_A: float = float(os.getenv("HYPERFINE_A", "25.09"))  # angstrom
    HYPERFINE_B: float = float(os.getenv("HYPERFINE_B", "14.43"))  # angstrom
    HYPERFINE_K0_FACTOR: float = float(os.getenv("HYPERFINE_K0_FACTOR", "0.85"))
    HYPERFINE_R0: float = float(os.getenv("HYPERFINE_R0", "20.0"))  # angstrom
    SHALLOW_DONOR_ENERGY: float = float(os.getenv("SHALLOW_DONOR_ENERGY", "0.029"))  # eV

    # Cluster heuristics
    BOX_HALF_SIDE_ANGSTROM: float = float(os.getenv("BOX_HALF_SIDE_ANGSTROM", "80.0"))
    PAIR_CUTOFF_ANGSTROM: float = float(
        os.getenv("PAIR_CUTOFF_ANGSTROM", str(math.sqrt(11.0) * 5.43 / 4.0))
    )
    DIVERGENCE_THRESHOLD: float = float(os.getenv("DIVERGENCE_THRESHOLD", "1e-6"))

    # Time grid
    TIME_POINTS: int = int(os.getenv("TIME_POINTS", "128"))

    # Root finding
    FIELD_SCAN_STEP: float = float(os.getenv("FIELD_SCAN_STEP", "1e-3"))  # tesla
    FIELD_SCAN_MAX: float = float(os.getenv("FIELD_SCAN_MAX", "1.2"))  # tesla
    ROOT_XTOL: float = float(os.getenv("ROOT_XTOL", "1e-14"))

    # Hahn/FID regime factor
    HAHN_OWP_THRESHOLD: float = float(os.getenv("HAHN_OWP_THRESHOLD", "0.2"))
    HAHN_OWP_FACTOR: float = float(os.getenv("HAHN_OWP_FACTOR", "2.0"))

    # ENDOR synthesis
    ENDOR_FWHM_HZ: float = float(os.getenv("ENDOR_FWHM_HZ", "0.12e6"))

    # Parallelism
    WORKERS: int = int(os.getenv("WORKERS", "1"))

    # RNG provenance
    RNG_ALGORITHM: str = "numpy.random.PCG64"

    # File paths
    BASE_DIR: Path = Path(__file__).parent.parent
    LOGS_DIR: Path = BASE_DIR / "logs"
    DATA_DIR: Path = BASE_DIR / "data"
    OUTPUT_DIR: Path = Path(os.getenv("OUTPUT_DIR", str(BASE_DIR / "output")))

    DONOR_FILE: Path = Path(os.getenv("DONOR_FILE", str(DATA_DIR / "donors.txt")))

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Path = LOGS_DIR / "donor_decoherence.log"

    def __post_init__(self):
        """Create necessary directories"""
        for directory in [self.LOGS_DIR, self.DATA_DIR, self.OUTPUT_DIR]:
            directory.mkdir(parents=True, exist_ok=True)

    def get_hyperfine_config(self) -> Dict[str, Any]:
        """Get Kohn-Luttinger envelope parameters"""
        return {
            "eta": self.HYPERFINE_ETA,
            "a": self.HYPERFINE_A,
            "b": self.HYPERFINE_B,
            "k0": self.HYPERFINE_K0_FACTOR * 2.0 * math.pi / self.LATTICE_A0,
            "r0": self.HYPERFINE_R0,
        }

    def get_cutoff_config(self) -> Dict[str, Any]:
        """Get cluster heuristic defaults"""
        return {
            "pair_separation_max": self.PAIR_CUTOFF_ANGSTROM,
            "growth_separation_max": self.PAIR_CUTOFF_ANGSTROM,
            "box_half_side": self.BOX_HALF_SIDE_ANGSTROM,
            "max_order": 2,
            "include_singles": False,
        }

    def get_fit_config(self) -> Dict[str, Any]:
        """Get decay fitting configuration"""
        return {
            "exponent_bounds": (0.5, 4.0),
            "grid_points": 24,
            "smooth_window": 5,
        }


settings = Settings()
settings.__post_init__()
