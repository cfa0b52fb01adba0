"""Dense spin-operator algebra for small multi-spin Hilbert spaces.

Every operator uses the descending sz convention: basis index k carries
m = S - k. Product spaces place the central system in slot 0 and bath
spins after it in ascending site index.
"""
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import linalg

from models.spin_models import HermitianEigensystem, ProductSpace, SpinOperatorSet
from utils.exceptions import InvalidArgumentError


def _two_s(total_spin: float) -> int:
    two_s = 2.0 * float(total_spin)
    if two_s < 0 or abs(two_s - round(two_s)) > 1e-12:
        raise InvalidArgumentError(f"total spin must be a non-negative half-integer, got {total_spin}")
    return int(round(two_s))


@lru_cache(maxsize=32)
def _ladder(two_s: int) -> np.ndarray:
    s = two_s / 2.0
    dim = two_s + 1
    m = s - np.arange(dim)
    s_plus = np.zeros((dim, dim), dtype=complex)
    for k in range(1, dim):
        s_plus[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
    s_plus.setflags(write=False)
    return s_plus


def build_spin_operators(total_spin: float) -> SpinOperatorSet:
    """Spin matrices for total spin S in the descending m basis"""
    two_s = _two_s(total_spin)
    s = two_s / 2.0
    s_plus = _ladder(two_s).copy()
    s_minus = s_plus.conj().T.copy()
    sz = np.diag(s - np.arange(two_s + 1)).astype(complex)
    return SpinOperatorSet(
        total_spin=s,
        dimension=two_s + 1,
        sx=0.5 * (s_plus + s_minus),
        sy=-0.5j * (s_plus - s_minus),
        sz=sz,
        s_plus=s_plus,
        s_minus=s_minus,
    )


def pauli_matrices():
    """(sigma_x, sigma_y, sigma_z) as 2x2 complex arrays"""
    ops = build_spin_operators(0.5)
    return 2.0 * ops.sx, 2.0 * ops.sy, 2.0 * ops.sz


def product_space(dimensions: Sequence[int]) -> ProductSpace:
    return ProductSpace(factor_dimensions=tuple(dimensions))


def embed(op: np.ndarray, slot: int, space: ProductSpace) -> np.ndarray:
    """Kronecker embedding of a single-factor operator into the product space"""
    dims = space.factor_dimensions
    if not 0 <= slot < len(dims):
        raise InvalidArgumentError(f"slot {slot} out of range for {len(dims)} factors")
    op = np.asarray(op)
    if op.shape != (dims[slot], dims[slot]):
        raise InvalidArgumentError(
            f"operator shape {op.shape} does not match factor dimension {dims[slot]}"
        )
    left = int(np.prod(dims[:slot])) if slot else 1
    right = int(np.prod(dims[slot + 1:])) if slot + 1 < len(dims) else 1
    return np.kron(np.kron(np.eye(left), op), np.eye(right))


def eigendecompose(h: np.ndarray) -> HermitianEigensystem:
    """Hermitian eigendecomposition with a deterministic phase convention.

    Eigenvalues ascend; the largest-magnitude component of each eigenvector
    is made real and positive.
    """
    h = np.asarray(h)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {h.shape}")
    scale = np.max(np.abs(h)) if h.size else 0.0
    if np.max(np.abs(h - h.conj().T)) > 1e-9 * max(scale, np.finfo(float).tiny):
        raise InvalidArgumentError("matrix is not Hermitian")

    values, vectors = linalg.eigh(h)
    vectors = np.asarray(vectors, dtype=complex)
    pivot = np.argmax(np.abs(vectors), axis=0)
    phases = vectors[pivot, np.arange(vectors.shape[1])]
    vectors = vectors * (np.abs(phases) / phases)[np.newaxis, :]
    return HermitianEigensystem(eigenvalues=np.asarray(values, dtype=float), eigenvectors=vectors)


def evolve(eig: HermitianEigensystem, t: float) -> np.ndarray:
    """U(t) = exp(-i H t) from a cached eigensystem"""
    if not np.isfinite(t):
        raise InvalidArgumentError(f"time must be finite, got {t}")
    v = eig.eigenvectors
    return (v * np.exp(-1j * eig.eigenvalues * t)[np.newaxis, :]) @ v.conj().T


def propagate(eig: HermitianEigensystem, states: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Apply U(t_k) to column k of ``states`` for every k at once"""
    v = eig.eigenvectors
    coefficients = v.conj().T @ states
    phases = np.exp(-1j * np.outer(eig.eigenvalues, times))
    return v @ (phases * coefficients)


def partial_trace_offdiagonal(state: np.ndarray, space: ProductSpace, u: int, l: int) -> complex:
    """<u| Tr_B rho |l> with the central system in slot 0"""
    rho = np.asarray(state)
    d_c = space.factor_dimensions[0]
    d_b = space.total_dimension // d_c
    if rho.shape != (space.total_dimension, space.total_dimension):
        raise InvalidArgumentError(f"state shape {rho.shape} does not match space")
    if u == l or not (0 <= u < d_c and 0 <= l < d_c):
        raise InvalidArgumentError(f"invalid central indices u={u}, l={l}")
    if abs(np.trace(rho) - 1.0) > 1e-9:
        raise InvalidArgumentError("density matrix trace must be 1")
    reduced = np.einsum('ibjb->ij', rho.reshape(d_c, d_b, d_c, d_b))
    return complex(reduced[u, l])


def reduced_coherence(psi: np.ndarray, d_central: int, bra_u: np.ndarray, bra_l: np.ndarray) -> np.ndarray:
    """<u| Tr_B |psi><psi| |l> for pure states; columns of psi are times"""
    psi = np.asarray(psi)
    if psi.ndim == 1:
        psi = psi[:, np.newaxis]
    blocks = psi.reshape(d_central, -1, psi.shape[-1])
    amp_u = np.einsum('c,cbt->bt', np.conj(bra_u), blocks)
    amp_l = np.einsum('c,cbt->bt', np.conj(bra_l), blocks)
    return np.sum(amp_u * np.conj(amp_l), axis=0)
