from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class BranchSign(str, Enum):
    PLUS = "+"
    MINUS = "-"


class SequenceKind(str, Enum):
    FID = "fid"
    CPMG = "cpmg"


class ArrayModel(BaseModel):
    """Base for models carrying numpy arrays"""
    model_config = ConfigDict(arbitrary_types_allowed=True)


# ---------------------------------------------------------------------------
# spin algebra
# ---------------------------------------------------------------------------

class SpinOperatorSet(ArrayModel):
    """Matrix representation of a spin of arbitrary total quantum number"""
    total_spin: float
    dimension: int
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray


class ProductSpace(BaseModel):
    """Ordered tensor-product space; central system first"""
    factor_dimensions: Tuple[int, ...]

    @field_validator('factor_dimensions')
    def dimensions_positive(cls, v):
        if not v or any(d < 1 for d in v):
            raise ValueError('factor dimensions must be positive')
        return tuple(int(d) for d in v)

    @property
    def total_dimension(self) -> int:
        return int(np.prod(self.factor_dimensions))


class HermitianEigensystem(ArrayModel):
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


# ---------------------------------------------------------------------------
# donor
# ---------------------------------------------------------------------------

class DonorParameters(BaseModel):
    """Group V donor: electron plus host nucleus with isotropic hyperfine"""
    model_config = ConfigDict(frozen=True)

    name: str = "custom"
    gamma_e: float = Field(..., gt=0)  # rad s^-1 T^-1
    gamma_host: float  # rad s^-1 T^-1, signed
    spin_host: float = Field(..., ge=0)
    hyperfine_A: float = Field(..., gt=0)  # rad s^-1
    ionization_energy: float = Field(..., gt=0)  # eV

    @field_validator('spin_host')
    def spin_must_be_half_integer(cls, v):
        if abs(2 * v - round(2 * v)) > 1e-12:
            raise ValueError(f'spin_host must be a half-integer, got {v}')
        return round(2 * v) / 2.0

    @model_validator(mode='after')
    def delta_must_be_small(self):
        if abs(self.gamma_host / self.gamma_e) >= 1:
            raise ValueError('|gamma_host / gamma_e| must be < 1')
        return self

    @property
    def delta(self) -> float:
        return self.gamma_host / self.gamma_e

    @property
    def dimension(self) -> int:
        return int(round(4 * self.spin_host + 2))


class AdiabaticState(BaseModel):
    """Donor eigenstate labelled both as |sign, m> and |i>"""
    model_config = ConfigDict(frozen=True)

    sign: BranchSign
    m: float
    index: int = Field(..., ge=1)

    @property
    def label(self) -> str:
        return f"|{self.sign.value},{self.m:g}>"


class DoubletSolution(BaseModel):
    """Closed-form solution of one constant-m block, energies in rad s^-1"""
    model_config = ConfigDict(frozen=True)

    m: float
    a: float
    b: float
    theta: float
    R: float
    Omega: float
    Delta: float
    epsilon: float
    energy_plus: float
    energy_minus: float


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------

class LatticeSite(BaseModel):
    """Diamond-cubic site in quarter-cell integer units"""
    model_config = ConfigDict(frozen=True)

    n: Tuple[int, int, int]

    def position(self, a0: float) -> np.ndarray:
        return np.asarray(self.n, dtype=float) * (a0 / 4.0)


class BathRealisation(ArrayModel):
    sites: np.ndarray  # (K, 3) int, quarter-cell units
    initial_states: np.ndarray  # (K,) int8, +1 up / -1 down
    abundance: float = Field(..., ge=0, le=1)
    seed: Optional[int] = None
    box_half_side: float = 0.0
    a0: float = 5.43

    @property
    def size(self) -> int:
        return int(len(self.sites))

    @property
    def positions(self) -> np.ndarray:
        return self.sites.astype(float) * (self.a0 / 4.0)


class ShellCensus(BaseModel):
    cells: int
    abundance: float
    shell_counts: Dict[int, int]
    expected_pairs: Dict[int, float]
    total_pairs: float
    density: Dict[int, float]
    total_density: float


# ---------------------------------------------------------------------------
# couplings
# ---------------------------------------------------------------------------

class HyperfineModel(BaseModel):
    """Kohn-Luttinger envelope parameters, lengths in angstrom"""
    model_config = ConfigDict(frozen=True)

    eta: float = Field(186.0, gt=0)
    a: float = Field(25.09, gt=0)
    b: float = Field(14.43, gt=0)
    k0: float = Field(..., gt=0)
    n_factor: float = Field(..., gt=0)
    r0: float = Field(20.0, ge=0)

    @model_validator(mode='after')
    def lengths_ordered(self):
        if not self.a > self.b:
            raise ValueError('envelope lengths must satisfy a > b > 0')
        return self


class BathCouplings(ArrayModel):
    """Per-realisation couplings; dipolar terms are evaluated on demand"""
    positions: np.ndarray  # (K, 3) angstrom
    hyperfine: np.ndarray  # (K,) rad s^-1, Ising coefficient of Sz Iz
    contact: Optional[np.ndarray] = None  # (K,) rad s^-1, isotropic part for flip-flop terms
    gamma_n: float
    b_direction: np.ndarray
    field: float = 0.0

    @property
    def size(self) -> int:
        return int(len(self.positions))


# ---------------------------------------------------------------------------
# cce engine
# ---------------------------------------------------------------------------

class PulseSequence(BaseModel):
    kind: SequenceKind = SequenceKind.CPMG
    pulses: int = Field(1, ge=0)

    @model_validator(mode='after')
    def fid_has_no_pulses(self):
        if self.kind == SequenceKind.FID and self.pulses != 0:
            raise ValueError('FID sequence cannot carry pulses')
        if self.kind == SequenceKind.CPMG and self.pulses < 1:
            raise ValueError('CPMG needs at least one pulse')
        return self

    @classmethod
    def fid(cls) -> "PulseSequence":
        return cls(kind=SequenceKind.FID, pulses=0)

    @classmethod
    def hahn(cls) -> "PulseSequence":
        return cls(kind=SequenceKind.CPMG, pulses=1)

    @property
    def label(self) -> str:
        return "fid" if self.kind == SequenceKind.FID else f"cpmg{self.pulses}"


class CutoffPolicy(BaseModel):
    pair_separation_max: float = Field(..., gt=0)  # angstrom
    growth_separation_max: float = Field(..., gt=0)  # angstrom
    box_half_side: float = Field(..., gt=0)  # angstrom
    max_order: int = Field(2, ge=1)
    include_singles: bool = False


class ClusterOptions(BaseModel):
    ising_only: bool = True
    truncated_basis: bool = True
    # conditional (pure-dephasing) projection onto the u/l polarisations
    pure_dephasing: bool = False


class CentralSystem(ArrayModel):
    """Donor block of the cluster problem in its (possibly truncated) basis"""
    hamiltonian: np.ndarray
    sz: np.ndarray
    s_plus: Optional[np.ndarray] = None
    ket_u: np.ndarray
    ket_l: np.ndarray
    pulse: np.ndarray
    basis_indices: Tuple[int, ...] = ()

    @property
    def dimension(self) -> int:
        return int(self.hamiltonian.shape[0])


class ClusterSet(BaseModel):
    """Canonically ordered clusters (sorted index tuples) keyed by order"""
    clusters: Dict[int, List[Tuple[int, ...]]] = Field(default_factory=dict)

    @property
    def counts(self) -> Dict[int, int]:
        return {order: len(items) for order, items in sorted(self.clusters.items())}

    def up_to(self, order: int) -> List[Tuple[int, ...]]:
        result = []
        for k in sorted(self.clusters):
            if k <= order:
                result.extend(self.clusters[k])
        return result


class AveragingKind(str, Enum):
    ALL = "all"
    SAMPLE = "sample"


class AveragingMode(BaseModel):
    """Bath initial-state averaging: every product state per cluster, or n sampled bath states"""
    kind: AveragingKind = AveragingKind.ALL
    samples: int = Field(1, ge=1)
    coherent: bool = True

    @classmethod
    def parse(cls, text: str, coherent: bool = True) -> "AveragingMode":
        text = text.strip().lower()
        if text == AveragingKind.ALL.value:
            return cls(kind=AveragingKind.ALL, coherent=coherent)
        if text.startswith(AveragingKind.SAMPLE.value + ":"):
            try:
                samples = int(text.split(":", 1)[1])
            except ValueError as e:
                raise ValueError(f"bad sample count in averaging mode '{text}'") from e
            return cls(kind=AveragingKind.SAMPLE, samples=samples, coherent=coherent)
        raise ValueError(f"averaging mode must be 'all' or 'sample:n', got '{text}'")

    @property
    def label(self) -> str:
        return "all" if self.kind == AveragingKind.ALL else f"sample:{self.samples}"


class CoherenceTrace(ArrayModel):
    times: np.ndarray
    values: np.ndarray
    metadata: Dict[str, Any] = Field(default_factory=dict)
    divergent: bool = False

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


# ---------------------------------------------------------------------------
# pseudospins
# ---------------------------------------------------------------------------

class PseudospinPair(BaseModel):
    """Two-spin cluster reduced to conditional 2x2 precessions, rates in rad s^-1"""
    model_config = ConfigDict(frozen=True)

    c12: float
    delta_j: float
    p_u: float = Field(..., ge=-1, le=1)
    p_l: float = Field(..., ge=-1, le=1)
    electron_detuning: float = 0.0
    state_detuning: float = 0.0


class CpmgAVector(ArrayModel):
    a0: Any
    ax: Any
    ay: Any
    az: Any

    def norm(self):
        return self.a0 ** 2 + self.ax ** 2 + self.ay ** 2 + self.az ** 2


class T2Estimate(BaseModel):
    """Closed-form coherence time with the regime decisions that produced it"""
    t2: float  # s, inf at an optimal working point
    prefactor: float  # s
    hahn_factor: float = 1.0
    sequence: str = "fid"
    flags: List[str] = Field(default_factory=list)


# ---------------------------------------------------------------------------
# spectra and fitting
# ---------------------------------------------------------------------------

class EndorCoupling(BaseModel):
    a_iso: float  # rad s^-1
    t_aniso: float = 0.0  # rad s^-1
    amplitude: float = 1.0
    theta0: float = 0.0  # rad
    fwhm: float = Field(0.12e6, gt=0)  # Hz, shared by all lines of a spectrum


class DecayFit(BaseModel):
    t2: float
    t2_prime: float
    exponent: float
    residual: float
    one_over_e: float
    method: str = "grid+curve_fit"
    flags: List[str] = Field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t2_s": self.t2,
            "t2_prime_s": self.t2_prime,
            "n": self.exponent,
            "residual": self.residual,
            "one_over_e_s": self.one_over_e,
            "method": self.method,
            "flags": list(self.flags),
        }
