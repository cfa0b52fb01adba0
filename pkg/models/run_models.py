"""Run configuration: key-value file with sections, overridden by CLI flags."""
import configparser
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from config.settings import settings
from models.spin_models import AveragingMode, PulseSequence, SequenceKind
from utils.exceptions import ConfigError


class OutputFormat(str, Enum):
    CSV = "csv"
    JSON = "json"


# key -> (unit/description) listed by --help
CONFIG_KEYS: Dict[str, str] = {
    "donor": "donor name from the donor file (P, As, Sb, Bi, e or custom)",
    "donor_file": "path of the donor parameter file",
    "transition": "levels u-l as '11-10' or '+,4:-,4'",
    "field_mT": "static field, millitesla",
    "field_start_mT": "sweep start, millitesla",
    "field_stop_mT": "sweep stop, millitesla",
    "field_steps": "number of sweep points",
    "angle_deg": "field angle from [001] towards [100], degrees",
    "sequence": "fid or cpmg",
    "pulses": "number of CPMG pi pulses (1 = Hahn echo)",
    "cce_order": "maximum cluster size",
    "box_half_side_angstrom": "half side of the cubic bath box, angstrom",
    "pair_cutoff_angstrom": "largest pair separation, angstrom",
    "growth_cutoff_angstrom": "largest separation for cluster growth, angstrom",
    "abundance": "29Si fraction",
    "seed": "base RNG seed; realisation k uses seed + k",
    "realisations": "number of bath realisations",
    "bath_file": "fixed bath CSV (n1,n2,n3,state) instead of random realisations",
    "average": "bath-state averaging: all or sample:n",
    "coherent": "average complex coherences (true) or moduli (false)",
    "convolve_mT": "Gaussian field inhomogeneity width, millitesla",
    "convolve_nodes": "Gauss-Hermite nodes of the field convolution",
    "t_max_us": "last time point, microseconds",
    "time_points": "number of time points",
    "ising_only": "drop flip-flop hyperfine terms",
    "truncated_basis": "keep only the Zeeman support of u and l",
    "pure_dephasing": "use the conditional two-level donor block",
    "smooth_window": "moving-average window for 1/e extraction, samples",
    "radius_angstrom": "census radius, angstrom",
    "field_restricted": "restrict equivalent pairs to the [001] field projection",
    "frequency_GHz": "microwave frequency, gigahertz",
    "endor_couplings_file": "CSV of ENDOR couplings (a_iso_MHz, t_aniso_MHz, amplitude, theta0_deg)",
    "a_iso_MHz": "single ENDOR coupling, isotropic part, megahertz",
    "t_aniso_MHz": "single ENDOR coupling, anisotropic part, megahertz",
    "endor_fwhm_MHz": "ENDOR line width, megahertz",
    "endor_points": "number of spectrum grid points",
    "workers": "threads for cluster evaluation",
    "out": "output directory",
    "format": "csv or json",
    "name": "stem of the output files",
}


class RunConfig(BaseModel):
    """Everything one command needs; echoed verbatim into the outputs"""
    donor: str = "Bi"
    donor_file: Optional[Path] = None
    transition: Optional[str] = None

    field_mT: float = Field(344.6, ge=0)
    field_start_mT: Optional[float] = Field(None, ge=0)
    field_stop_mT: Optional[float] = Field(None, ge=0)
    field_steps: int = Field(1, ge=1)
    angle_deg: float = Field(0.0, ge=0, le=180)

    sequence: SequenceKind = SequenceKind.CPMG
    pulses: int = Field(1, ge=0)
    cce_order: int = Field(2, ge=1)
    box_half_side_angstrom: float = Field(default_factory=lambda: settings.BOX_HALF_SIDE_ANGSTROM, gt=0)
    pair_cutoff_angstrom: float = Field(default_factory=lambda: settings.PAIR_CUTOFF_ANGSTROM, gt=0)
    growth_cutoff_angstrom: Optional[float] = Field(None, gt=0)
    abundance: float = Field(default_factory=lambda: settings.SI29_ABUNDANCE, ge=0, le=1)
    seed: int = Field(0, ge=0)
    realisations: int = Field(1, ge=1)
    bath_file: Optional[Path] = None
    average: str = "all"
    coherent: bool = True
    convolve_mT: float = Field(0.0, ge=0)
    convolve_nodes: int = Field(8, ge=1)

    t_max_us: float = Field(1000.0, gt=0)
    time_points: int = Field(default_factory=lambda: settings.TIME_POINTS, ge=8)
    ising_only: bool = True
    truncated_basis: bool = True
    pure_dephasing: bool = False
    smooth_window: int = Field(1, ge=1)

    radius_angstrom: float = Field(100.0, gt=0)
    field_restricted: bool = False
    frequency_GHz: float = Field(9.7, gt=0)

    endor_couplings_file: Optional[Path] = None
    a_iso_MHz: Optional[float] = None
    t_aniso_MHz: float = 0.0
    endor_fwhm_MHz: float = Field(default_factory=lambda: settings.ENDOR_FWHM_HZ / 1e6, gt=0)
    endor_points: int = Field(2001, ge=8)

    workers: int = Field(default_factory=lambda: settings.WORKERS, ge=1)
    out: Path = Field(default_factory=lambda: settings.OUTPUT_DIR)
    format: OutputFormat = OutputFormat.CSV
    name: Optional[str] = None

    @field_validator('average')
    def average_must_parse(cls, v):
        AveragingMode.parse(v)
        return v.strip().lower()

    @field_validator('donor_file', 'bath_file', 'endor_couplings_file')
    def file_must_exist(cls, v):
        if v is not None and not Path(v).is_file():
            raise ValueError(f'file not found: {v}')
        return v

    @model_validator(mode='after')
    def sweep_must_be_nonempty(self):
        if (self.field_start_mT is None) != (self.field_stop_mT is None):
            raise ValueError('give both field_start_mT and field_stop_mT for a sweep')
        if self.field_start_mT is not None and self.field_stop_mT < self.field_start_mT:
            raise ValueError('field sweep must run upwards')
        if self.sequence == SequenceKind.FID:
            self.pulses = 0
        elif self.pulses < 1:
            raise ValueError('cpmg needs at least one pulse')
        return self

    # derived quantities -------------------------------------------------

    @property
    def field(self) -> float:
        return self.field_mT * 1e-3

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max_us * 1e-6, self.time_points)

    @property
    def sweep_fields(self) -> np.ndarray:
        if self.field_start_mT is None:
            return np.array([self.field])
        return np.linspace(self.field_start_mT, self.field_stop_mT, self.field_steps) * 1e-3

    @property
    def b_direction(self) -> np.ndarray:
        angle = np.deg2rad(self.angle_deg)
        return np.array([np.sin(angle), 0.0, np.cos(angle)])

    @property
    def pulse_sequence(self) -> PulseSequence:
        return PulseSequence(kind=self.sequence, pulses=self.pulses)

    @property
    def averaging(self) -> AveragingMode:
        return AveragingMode.parse(self.average, self.coherent)

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode='json')


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Flatten a sectioned key = value file; later sections override earlier ones"""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=('#', ';'))
    parser.optionxform = str
    try:
        with open(path, 'r', encoding='utf-8') as f:
            text = f.read()
        if not text.lstrip().startswith('['):
            text = "[run]\n" + text
        parser.read_string(text, source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"cannot parse config file {path}: {e}") from e

    values: Dict[str, str] = {}
    for section in parser.sections():
        values.update(parser[section])
    unknown = set(values) - set(CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {sorted(unknown)}")
    return values


def build_run_config(path: Optional[Union[str, Path]] = None, overrides: Dict[str, Any] = None) -> RunConfig:
    """File keys first, then every non-None override"""
    values: Dict[str, Any] = read_config_file(path) if path else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    try:
        return RunConfig(**values)
    except ValueError as e:
        raise ConfigError(f"invalid run configuration: {e}") from e
