"""
Random operators for property tests and the acceptance battery.

Every function draws from a caller-supplied numpy Generator so results
are reproducible from a seed.
"""

from typing import Optional

import numpy as np

from .operator_core import dagger


def random_ket(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random normalized state vector."""
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return psi / np.linalg.norm(psi)


def random_hermitian(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Gaussian Hermitian matrix (GUE-like), entries of order `scale`."""
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * 0.5 * (X + dagger(X))


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary via QR with the phase fix on the diagonal of R."""
    X = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / np.sqrt(2)
    Q, R = np.linalg.qr(X)
    phases = np.diag(R) / np.abs(np.diag(R))
    return Q * phases


def random_density_matrix(dim: int, rng: np.random.Generator, rank: Optional[int] = None) -> np.ndarray:
    """Random unit-trace density matrix of the given rank (full rank by default)."""
    rank = dim if rank is None else rank
    G = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = G @ dagger(G)
    rho = 0.5 * (rho + dagger(rho))
    return rho / np.trace(rho).real


def random_dissipator(dim: int, rng: np.random.Generator, strength: float = 1.0) -> np.ndarray:
    """Random positive semidefinite decay matrix C for H_eff = A - iC."""
    G = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    C = G @ dagger(G) / dim
    return strength * 0.5 * (C + dagger(C))
