"""
Operator Core - Dense complex-matrix algebra for the Fisher toolkit.

This module handles:
1. Hermitian eigendecomposition (descending order) and eigenvalue clipping
2. Matrix exponentials, tensor products and partial traces
3. Generalized Gell-Mann bases of Hermitian operators
4. The symmetric logarithmic derivative (SLD) solver

All functions are pure and operate on numpy arrays. Subsystem indices
are 0-based here; subsystem 0 is the leftmost tensor factor.
"""

import logging
from dataclasses import dataclass, field
from functools import reduce
from typing import List, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from .errors import (
    DimensionMismatchError,
    InvalidStateError,
    MatrixOverflowError,
    NonHermitianError,
)

logger = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12  # relative to max(1, max|M|)
SUPPORT_RTOL = 1e-10  # SLD support cutoff, relative to the largest eigenvalue
EIGEN_CLIP_TOL = 1e-10  # negative eigenvalue dust tolerated in density operators
BASIS_NORM = 2.0  # Tr[e_a e_b] = BASIS_NORM * delta_ab


def dagger(M: np.ndarray) -> np.ndarray:
    """Conjugate transpose."""
    return np.conj(np.swapaxes(M, -1, -2))


def hermiticity_defect(M: np.ndarray) -> float:
    """Return max|M - M^dagger|."""
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {M.shape}")
    return float(np.max(np.abs(M - dagger(M)))) if M.size else 0.0


def is_hermitian(M: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    M = np.asarray(M)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    return hermiticity_defect(M) <= tol * scale


def require_hermitian(M: np.ndarray, what: str = "matrix", tol: float = HERMITIAN_TOL) -> np.ndarray:
    """
    Validate Hermiticity and return the symmetrized matrix (M + M^dagger)/2.

    Raises:
        NonHermitianError: If the defect exceeds tol * max(1, max|M|)
    """
    M = np.asarray(M, dtype=complex)
    if not is_hermitian(M, tol):
        raise NonHermitianError(hermiticity_defect(M), what)
    return 0.5 * (M + dagger(M))


def hermitian_eig(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a Hermitian matrix.

    Args:
        M: Hermitian matrix

    Returns:
        (eigenvalues, eigenvectors) with eigenvalues sorted descending and
        eigenvectors as the columns of a unitary matrix
    """
    H = require_hermitian(M)
    lam, V = np.linalg.eigh(H)
    return lam[::-1].copy(), V[:, ::-1].copy()


def clip_psd(M: np.ndarray, tol: float = EIGEN_CLIP_TOL) -> np.ndarray:
    """
    Clip negative eigenvalue dust of a density-like matrix to zero.

    Eigenvalues in [-tol, 0) are set to 0; anything more negative is an error.
    Matrices without negative eigenvalues are returned unchanged.
    """
    lam, V = hermitian_eig(M)
    if lam[-1] < -tol:
        raise InvalidStateError(f"matrix is not positive semidefinite: min eigenvalue {lam[-1]:.3e}")
    if lam[-1] >= 0:
        return require_hermitian(M)
    logger.debug(f"clipping eigenvalue dust down to {lam[-1]:.3e}")
    lam = np.clip(lam, 0.0, None)
    return (V * lam) @ dagger(V)


def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """Principal square root of a positive semidefinite matrix."""
    lam, V = hermitian_eig(M)
    return (V * np.sqrt(np.clip(lam, 0.0, None))) @ dagger(V)


def tensor(*matrices: np.ndarray) -> np.ndarray:
    """
    Kronecker product of one or more matrices.

    Row-major convention: (i_A, i_B) maps to i_A * dim_B + i_B.
    """
    if not matrices:
        raise DimensionMismatchError("tensor() needs at least one operand")
    return reduce(np.kron, (np.asarray(m) for m in matrices))


def partial_trace(M: np.ndarray, subsystem_dims: Sequence[int], traced: Sequence[int]) -> np.ndarray:
    """
    Partial trace over the listed subsystems.

    Args:
        M: Square matrix on the product space
        subsystem_dims: Dimension of each tensor factor, leftmost first
        traced: 0-based indices of the factors to trace out

    Returns:
        Matrix on the remaining factors; the 1x1 matrix [Tr M] when every
        factor is traced
    """
    M = np.asarray(M)
    dims = [int(d) for d in subsystem_dims]
    total = int(np.prod(dims)) if dims else 1
    if M.shape != (total, total):
        raise DimensionMismatchError(f"matrix shape {M.shape} does not match subsystem dims {dims}")
    traced_set = sorted(set(int(k) for k in traced), reverse=True)
    if any(k < 0 or k >= len(dims) for k in traced_set):
        raise DimensionMismatchError(f"traced indices {sorted(traced_set)} out of range for {len(dims)} subsystems")

    T = M.reshape(dims + dims)
    remaining = list(dims)
    for k in traced_set:
        n = len(remaining)
        T = np.trace(T, axis1=k, axis2=k + n)
        remaining.pop(k)

    side = int(np.prod(remaining)) if remaining else 1
    return T.reshape(side, side)


def matrix_exp(M: np.ndarray) -> np.ndarray:
    """
    Matrix exponential (scipy's Pade scaling-and-squaring).

    Raises:
        MatrixOverflowError: If the input or the result is not finite
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatchError(f"expected a square matrix, got shape {M.shape}")
    norm = float(np.linalg.norm(M, 1)) if np.all(np.isfinite(M)) else float("inf")
    if not np.isfinite(norm):
        raise MatrixOverflowError(norm, "non-finite input")
    with np.errstate(over="ignore", invalid="ignore"):
        result = expm(M)
    if not np.all(np.isfinite(result)):
        raise MatrixOverflowError(norm)
    return result


def vec(M: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization, so vec(AXB) = (B^T kron A) vec(X)."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v: np.ndarray, dim: int) -> np.ndarray:
    """Inverse of vec for a dim x dim matrix."""
    return np.asarray(v).reshape((dim, dim), order="F")


@dataclass(frozen=True)
class HermitianBasis:
    """Trace-orthogonal basis of the real space of dim x dim Hermitian matrices."""
    dim: int
    elements: List[np.ndarray] = field(repr=False)
    norm: float = BASIS_NORM  # Tr[e_a e_b] = norm * delta_ab

    def coefficients(self, M: np.ndarray) -> np.ndarray:
        """Expansion coefficients c_a = Tr[e_a M] / norm (real for Hermitian M)."""
        M = np.asarray(M)
        return np.array([np.trace(e @ M) for e in self.elements]) / self.norm

    def reconstruct(self, coefficients: Sequence[complex]) -> np.ndarray:
        return sum(c * e for c, e in zip(coefficients, self.elements))

    def gram(self) -> np.ndarray:
        return np.array([[np.trace(a @ b) for b in self.elements] for a in self.elements])


def hermitian_basis(dim: int) -> HermitianBasis:
    """
    Generalized Gell-Mann basis plus scaled identity.

    Order: identity, then for each pair a < b the symmetric element
    E_ab + E_ba followed by the antisymmetric -i(E_ab - E_ba), then the
    traceless diagonal ladder. For dim=2 this is (I, sigma_x, sigma_y, sigma_z).
    """
    if dim < 1:
        raise DimensionMismatchError(f"basis dimension must be positive, got {dim}")

    elements = [np.sqrt(BASIS_NORM / dim) * np.eye(dim, dtype=complex)]
    for a in range(dim):
        for b in range(a + 1, dim):
            sym = np.zeros((dim, dim), dtype=complex)
            sym[a, b] = sym[b, a] = 1.0
            anti = np.zeros((dim, dim), dtype=complex)
            anti[a, b] = -1j
            anti[b, a] = 1j
            elements.extend([sym, anti])
    for k in range(1, dim):
        diag = np.zeros(dim)
        diag[:k] = 1.0
        diag[k] = -k
        elements.append(np.sqrt(BASIS_NORM / (k * (k + 1))) * np.diag(diag).astype(complex))

    return HermitianBasis(dim=dim, elements=elements)


@dataclass(frozen=True)
class SldSolution:
    """SLD together with the diagnostics of its support structure."""
    sld: np.ndarray
    eigenvalues: np.ndarray  # of rho, descending
    support_rank: int
    kernel_defect: float  # max |drho_ij| on kernel-kernel pairs (eigenbasis of rho)
    support_cutoff: float

    @property
    def consistent(self) -> bool:
        """False when drho has kernel-kernel components no SLD can reproduce."""
        return self.kernel_defect <= self.support_cutoff


def sld_decomposition(rho: np.ndarray, drho: np.ndarray) -> SldSolution:
    """
    Solve (rho L + L rho)/2 = drho on the support of rho.

    In the eigenbasis of rho, L_ij = 2 drho_ij / (lam_i + lam_j) whenever
    lam_i + lam_j exceeds SUPPORT_RTOL * lam_max, and 0 otherwise.
    """
    rho = require_hermitian(rho, "rho")
    drho = require_hermitian(drho, "drho")
    if rho.shape != drho.shape:
        raise DimensionMismatchError(f"rho {rho.shape} and drho {drho.shape} differ in shape")

    lam, V = hermitian_eig(rho)
    if lam[0] <= 0:
        raise InvalidStateError("rho has no positive eigenvalue")
    cutoff = SUPPORT_RTOL * lam[0]

    D = dagger(V) @ drho @ V
    denom = lam[:, None] + lam[None, :]
    support = denom > cutoff
    L_eig = np.zeros_like(D)
    L_eig[support] = 2.0 * D[support] / denom[support]

    kernel_defect = float(np.max(np.abs(D[~support]))) if np.any(~support) else 0.0
    L = V @ L_eig @ dagger(V)
    L = 0.5 * (L + dagger(L))

    solution = SldSolution(
        sld=L,
        eigenvalues=lam,
        support_rank=int(np.count_nonzero(lam > cutoff)),
        kernel_defect=kernel_defect,
        support_cutoff=cutoff,
    )
    if not solution.consistent:
        logger.debug(
            f"drho has kernel components of size {kernel_defect:.3e} "
            f"(cutoff {cutoff:.3e}); they are not representable by an SLD"
        )
    return solution


def solve_sld(rho: np.ndarray, drho: np.ndarray) -> np.ndarray:
    """Return the symmetric logarithmic derivative L of drho at rho."""
    return sld_decomposition(rho, drho).sld


def merged_spectrum(M: np.ndarray, rtol: float = 1e-10) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Spectral decomposition with near-degenerate eigenvalues merged.

    Eigenvalues closer than rtol * max|lambda| are treated as one outcome and
    their eigenprojectors summed.

    Returns:
        (outcomes descending, projectors)
    """
    lam, V = hermitian_eig(M)
    scale = max(float(np.max(np.abs(lam))), np.finfo(float).tiny)
    outcomes: List[float] = []
    groups: List[List[int]] = []
    for i, value in enumerate(lam):
        if groups and abs(outcomes[-1] - value) < rtol * scale:
            groups[-1].append(i)
            outcomes[-1] = float(np.mean(lam[groups[-1]]))
        else:
            groups.append([i])
            outcomes.append(float(value))
    projectors = [V[:, g] @ dagger(V[:, g]) for g in groups]
    return np.array(outcomes), projectors
