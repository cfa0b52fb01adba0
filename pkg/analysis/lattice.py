"""Diamond-cubic silicon lattice, random 29Si occupation and equivalent-pair census.

Sites are integer 3-vectors n in quarter-cell units, position = (a0/4) n.
The donor sits on the origin site, which is never part of the bath.
"""
import itertools
import math
from collections import Counter
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from config.settings import settings
from models.spin_models import BathRealisation, LatticeSite, ShellCensus
from utils.exceptions import InvalidArgumentError
from utils.logging_config import logger

BASIS = np.array([
    (0, 0, 0), (0, 2, 2), (2, 0, 2), (2, 2, 0),
    (1, 1, 3), (1, 3, 1), (3, 1, 1), (3, 3, 3),
], dtype=np.int64)

_BASIS_SET = {tuple(b) for b in BASIS}
SHELL_MULTIPLICITIES = (48, 24, 12, 8, 6, 4)


def _point_operations() -> List[Tuple[Tuple[int, int, int], Tuple[int, int, int]]]:
    ops = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            ops.append((perm, signs))
    return ops


POINT_OPERATIONS = _point_operations()


def is_lattice_site(n: Sequence[int]) -> bool:
    return tuple(int(x) % 4 for x in n) in _BASIS_SET


def nearest_neighbour_distance(a0: float = None) -> float:
    return math.sqrt(3.0) / 4.0 * (a0 or settings.LATTICE_A0)


def generate_sites(cells: int = None, half_side: float = None, a0: float = None) -> np.ndarray:
    """All lattice sites of the cubic box, lexicographically ordered.

    ``cells`` = N gives the 8N^3 unit cells with corner index k in [-N, N-1]
    (64N^3 sites); ``half_side`` in angstrom keeps every site with
    max|position| <= half_side.
    """
    a0 = a0 or settings.LATTICE_A0
    if (cells is None) == (half_side is None):
        raise InvalidArgumentError("give exactly one of cells or half_side")
    if cells is not None:
        if cells < 1:
            raise InvalidArgumentError(f"cell count must be positive, got {cells}")
        k_range = np.arange(-cells, cells)
    else:
        if half_side <= 0:
            raise InvalidArgumentError(f"half side must be positive, got {half_side}")
        n_cells = int(math.ceil(half_side / a0))
        k_range = np.arange(-n_cells - 1, n_cells + 1)

    corners = np.stack(np.meshgrid(k_range, k_range, k_range, indexing='ij'), axis=-1).reshape(-1, 3)
    sites = (4 * corners[:, np.newaxis, :] + BASIS[np.newaxis, :, :]).reshape(-1, 3)
    if half_side is not None:
        limit = 4.0 * half_side / a0
        sites = sites[np.all(np.abs(sites) <= limit + 1e-9, axis=1)]
    order = np.lexsort((sites[:, 2], sites[:, 1], sites[:, 0]))
    return sites[order]


def populate(sites: np.ndarray, abundance: float, seed: Optional[int],
             half_side: float = 0.0, a0: float = None) -> BathRealisation:
    """Occupy each site independently with probability ``abundance``.

    Occupied spins start up or down with probability 1/2. The origin is
    reserved for the donor.
    """
    if not 0.0 <= abundance <= 1.0:
        raise InvalidArgumentError(f"abundance must lie in [0, 1], got {abundance}")
    a0 = a0 or settings.LATTICE_A0
    sites = np.asarray(sites, dtype=np.int64)
    sites = sites[np.any(sites != 0, axis=1)]

    rng = np.random.Generator(np.random.PCG64(seed))
    occupied = rng.random(len(sites)) < abundance
    chosen = sites[occupied]
    states = np.where(rng.random(len(chosen)) < 0.5, 1, -1).astype(np.int8)

    logger.debug(f"Populated {len(chosen)} of {len(sites)} sites (p={abundance}, seed={seed})")
    return BathRealisation(
        sites=chosen, initial_states=states, abundance=abundance,
        seed=seed, box_half_side=half_side, a0=a0,
    )


def random_bath(half_side: float, abundance: float = None, seed: Optional[int] = None,
                a0: float = None) -> BathRealisation:
    abundance = settings.SI29_ABUNDANCE if abundance is None else abundance
    return populate(generate_sites(half_side=half_side, a0=a0), abundance, seed, half_side, a0)


def save_bath(bath: BathRealisation, path: Union[str, Path]) -> Path:
    path = Path(path)
    frame = pd.DataFrame({
        'n1': bath.sites[:, 0], 'n2': bath.sites[:, 1], 'n3': bath.sites[:, 2],
        'state': bath.initial_states.astype(int),
    })
    frame.to_csv(path, index=False)
    return path


def load_bath(path: Union[str, Path], abundance: float = None, a0: float = None) -> BathRealisation:
    frame = pd.read_csv(path)
    missing = {'n1', 'n2', 'n3', 'state'} - set(frame.columns)
    if missing:
        raise InvalidArgumentError(f"bath file {path} lacks columns {sorted(missing)}")
    sites = frame[['n1', 'n2', 'n3']].to_numpy(dtype=np.int64)
    bad = [tuple(n) for n in sites if not is_lattice_site(n)]
    if bad:
        raise InvalidArgumentError(f"bath file {path} holds non-lattice sites, e.g. {bad[0]}")
    if not set(frame['state'].unique()) <= {1, -1}:
        raise InvalidArgumentError("bath states must be +1 or -1")
    return BathRealisation(
        sites=sites, initial_states=frame['state'].to_numpy(dtype=np.int8),
        abundance=settings.SI29_ABUNDANCE if abundance is None else abundance,
        a0=a0 or settings.LATTICE_A0,
    )


# ---------------------------------------------------------------------------
# symmetry and shells
# ---------------------------------------------------------------------------

def orbit(n: Sequence[int]) -> List[Tuple[int, int, int]]:
    """Images of n under the 48 cubic operations that land on lattice sites"""
    images = set()
    for perm, signs in POINT_OPERATIONS:
        image = tuple(signs[k] * int(n[perm[k]]) for k in range(3))
        if is_lattice_site(image):
            images.add(image)
    return sorted(images)


def equivalent_sites(site: Union[LatticeSite, Sequence[int]], field_direction: Sequence[float] = None,
                     ) -> List[LatticeSite]:
    """Sites sharing |J_F| with ``site``.

    With a field direction only the images with the same (n_B . n)^2 are
    kept, since the residual dipolar term also depends on that projection.
    """
    n = site.n if isinstance(site, LatticeSite) else tuple(int(x) for x in site)
    if not is_lattice_site(n):
        raise InvalidArgumentError(f"{n} is not a diamond-lattice site")
    images = orbit(n)
    if field_direction is not None:
        b_hat = np.asarray(field_direction, dtype=float)
        b_hat = b_hat / np.linalg.norm(b_hat)
        target = float(np.dot(b_hat, n)) ** 2
        images = [img for img in images if abs(float(np.dot(b_hat, img)) ** 2 - target) < 1e-9]
    return [LatticeSite(n=img) for img in images]


def census_sites(cells: int) -> np.ndarray:
    """Sites counted by the shell census: complete shells for N cells"""
    full = np.arange(-4 * cells, 4 * cells + 1)
    grid = np.stack(np.meshgrid(full, full, full, indexing='ij'), axis=-1).reshape(-1, 3)
    mod = grid % 4

    is_zero_mod = np.all(mod == 0, axis=1)
    two_count = np.sum(mod == 2, axis=1)
    zero_count = np.sum(mod == 0, axis=1)
    is_fcc_face = (two_count == 2) & (zero_count == 1)
    inner = np.all(np.abs(grid) <= 4 * cells - 1, axis=1)
    odd = np.all(mod % 2 == 1, axis=1)

    # face-type sites: the 2-mod-4 coordinates stop at 4N-2
    face_ok = is_fcc_face & np.all((mod != 2) | (np.abs(grid) <= 4 * cells - 2), axis=1)
    lattice = np.array([tuple(m) in _BASIS_SET for m in map(tuple, mod)])
    keep = lattice & (is_zero_mod | face_ok | (odd & inner))
    return grid[keep]


def brute_force_shell_counts(cells: int) -> Dict[int, int]:
    """Shell counts per multiplicity by explicit enumeration"""
    keys = Counter(tuple(sorted(np.abs(n))) for n in map(tuple, census_sites(cells)))
    counts = Counter(size for key, size in keys.items() if any(key))
    return {n_s: int(counts.get(n_s, 0)) for n_s in SHELL_MULTIPLICITIES}


def shell_counts(cells: int) -> Dict[int, int]:
    """Closed-form number of shells of each multiplicity within N cells"""
    n = int(cells)
    if n < 1:
        raise InvalidArgumentError(f"cell count must be >= 1, got {cells}")
    return {
        48: n * (n - 1) * (2 * n - 1) // 3,
        24: (4 * n * (n * n - 1) + 3 * n * n) // 3,
        12: 4 * n * n,
        8: n,
        6: n,
        4: 2 * n,
    }


def expected_pairs(multiplicity: int, abundance: float) -> float:
    """Mean number of same-shell pairs under binomial occupation"""
    k = np.arange(multiplicity + 1)
    weights = stats.binom.pmf(k, multiplicity, abundance)
    return float(np.sum(weights * k * (k - 1) / 2.0))


def cells_for_radius(radius: float, a0: float = None) -> int:
    """Cell count covering a radius, with one guard cell"""
    return int(math.ceil(radius / (a0 or settings.LATTICE_A0))) + 1


def shell_census(cells: int, abundance: float = None, field_restricted: bool = False) -> ShellCensus:
    """Equivalent-pair census: shell counts, mean pairs, totals and cell densities"""
    abundance = settings.SI29_ABUNDANCE if abundance is None else abundance
    if not 0.0 <= abundance <= 1.0:
        raise InvalidArgumentError(f"abundance must lie in [0, 1], got {abundance}")
    counts = shell_counts(cells)
    multiplicity = {n_s: n_s for n_s in counts}
    if field_restricted:
        # B || [100] splits the 48, 24 and 12 shells into thirds
        for n_s in (48, 24, 12):
            counts[n_s] *= 3
            multiplicity[n_s] = n_s // 3

    zeta = {n_s: expected_pairs(multiplicity[n_s], abundance) for n_s in counts}
    pairs = {n_s: zeta[n_s] * counts[n_s] for n_s in counts}
    volume = float((2 * cells) ** 3)
    density = {n_s: pairs[n_s] / volume for n_s in counts}
    total = float(sum(pairs.values()))

    logger.debug(f"Census N={cells}, p={abundance}: N_EP={total:.1f}")
    return ShellCensus(
        cells=cells, abundance=abundance, shell_counts=counts, expected_pairs=zeta,
        total_pairs=total, density=density, total_density=total / volume,
    )
