"""
States - Density operators, accessible subspaces and the blank-state extension.

This module handles:
1. Validated density operators (normalized or subnormalized)
2. Projection of a full state onto the accessible subspace M
3. Extension of the accessible block by a single blank state |B>
4. The block-diagonal composite local state of N subsystems
5. Expectation values of local estimators and JSON round-trips

The blank state is always the LAST basis index of an extended space.
Subsequences of subsystems are 1-based sorted tuples, () being the empty one.
"""

import itertools
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Tuple, Union

import numpy as np
from scipy.linalg import block_diag, null_space

from .errors import DimensionMismatchError, InvalidStateError, OutsideTimeDomainError
from .operator_core import clip_psd, dagger, partial_trace, require_hermitian, tensor

if TYPE_CHECKING:
    from .fisher import CompositeEstimator, LocalEstimator

logger = logging.getLogger(__name__)

TRACE_TOL = 1e-9
ACCESSIBLE_TRACE_FLOOR = 1e-12  # below this the time is treated as at/after t*
ORTHONORMAL_TOL = 1e-12

Subsequence = Tuple[int, ...]


class TraceClass(Enum):
    """Trace normalization of a density operator."""
    NORMALIZED = "normalized"  # |Tr - 1| <= 1e-9
    SUBNORMALIZED = "subnormalized"  # 0 < Tr <= 1 + 1e-9


@dataclass(frozen=True)
class DensityOperator:
    """Positive semidefinite matrix with trace in (0, 1]."""
    matrix: np.ndarray = field(repr=False)
    trace_class: TraceClass = TraceClass.NORMALIZED

    def __post_init__(self):
        M = clip_psd(require_hermitian(self.matrix, "density operator"))
        tr = float(np.trace(M).real)
        if self.trace_class is TraceClass.NORMALIZED and abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"normalized state has trace {tr:.12g}")
        if self.trace_class is TraceClass.SUBNORMALIZED and not (0.0 < tr <= 1.0 + TRACE_TOL):
            raise InvalidStateError(f"subnormalized state has trace {tr:.12g}, expected (0, 1]")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "DensityOperator":
        """Build a state, inferring the trace class from the trace."""
        tr = float(np.trace(np.asarray(matrix)).real)
        kind = TraceClass.NORMALIZED if abs(tr - 1.0) <= TRACE_TOL else TraceClass.SUBNORMALIZED
        return cls(np.asarray(matrix, dtype=complex), kind)

    @classmethod
    def from_ket(cls, psi: np.ndarray) -> "DensityOperator":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        return cls.from_matrix(np.outer(psi, psi.conj()))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)


@dataclass(frozen=True)
class SubspaceProjector:
    """Orthogonal projector P onto the accessible subspace M of the full space."""
    full_dim: int
    basis: np.ndarray = field(repr=False)  # full_dim x rank, orthonormal columns

    def __post_init__(self):
        V = np.asarray(self.basis, dtype=complex)
        if V.ndim != 2 or V.shape[0] != self.full_dim or V.shape[1] < 1:
            raise DimensionMismatchError(f"basis of shape {V.shape} does not fit full_dim={self.full_dim}")
        gram = dagger(V) @ V
        if np.max(np.abs(gram - np.eye(V.shape[1]))) > ORTHONORMAL_TOL:
            raise InvalidStateError("projector basis vectors are not orthonormal")
        V.setflags(write=False)
        object.__setattr__(self, "basis", V)

    @classmethod
    def from_indices(cls, full_dim: int, indices: List[int]) -> "SubspaceProjector":
        """Projector onto the span of the listed computational basis vectors."""
        V = np.eye(full_dim, dtype=complex)[:, list(indices)]
        return cls(full_dim, V)

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def projector(self) -> np.ndarray:
        return self.basis @ dagger(self.basis)

    @property
    def complement_basis(self) -> np.ndarray:
        """Orthonormal basis of the orthogonal complement of M (full_dim x (full_dim - rank))."""
        if self.rank == self.full_dim:
            return np.zeros((self.full_dim, 0), dtype=complex)
        return null_space(dagger(self.basis))

    def compress(self, X: np.ndarray) -> np.ndarray:
        """V^dagger X V: the operator P X P written in the basis of M."""
        return dagger(self.basis) @ np.asarray(X) @ self.basis

    def embed(self, Y: np.ndarray) -> np.ndarray:
        """V Y V^dagger: an operator on M written on the full space."""
        return self.basis @ np.asarray(Y) @ dagger(self.basis)


@dataclass(frozen=True)
class BlankExtendedState:
    """Unit-trace local state rho_par + (1 - Tr rho_par)|B><B| on M + C|B>."""
    accessible_block: DensityOperator
    blank_weight: float

    def __post_init__(self):
        expected = 1.0 - self.accessible_block.trace
        if abs(self.blank_weight - max(expected, 0.0)) > TRACE_TOL:
            raise InvalidStateError(
                f"blank weight {self.blank_weight:.12g} inconsistent with accessible trace "
                f"{self.accessible_block.trace:.12g}"
            )

    @property
    def dim(self) -> int:
        """Dimension of the extended space (accessible dimension + 1)."""
        return self.accessible_block.dim + 1

    def matrix(self) -> np.ndarray:
        return block_diag(self.accessible_block.matrix, np.array([[self.blank_weight]]))


def subsequences(n: int) -> List[Subsequence]:
    """All 2^n subsequences of (1..n), by length then lexicographically."""
    labels = range(1, n + 1)
    return [s for size in range(n + 1) for s in itertools.combinations(labels, size)]


@dataclass
class CompositeLocalState:
    """The 2^N diagonal blocks of the composite local density operator."""
    n_subsystems: int
    dim_m: int
    blocks: Dict[Subsequence, np.ndarray] = field(repr=False)

    def __post_init__(self):
        for s in subsequences(self.n_subsystems):
            if s not in self.blocks:
                raise DimensionMismatchError(f"missing block for subsequence {list(s)}")
            side = self.dim_m ** (self.n_subsystems - len(s))
            if np.shape(self.blocks[s]) != (side, side):
                raise DimensionMismatchError(
                    f"block {list(s)} has shape {np.shape(self.blocks[s])}, expected {(side, side)}"
                )
            self.blocks[s] = clip_psd(np.asarray(self.blocks[s], dtype=complex))
        tr = self.total_trace()
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidStateError(f"composite blocks carry total trace {tr:.12f}, expected 1")

    def block(self, s: Subsequence) -> np.ndarray:
        return self.blocks[tuple(s)]

    def total_trace(self) -> float:
        return float(sum(np.trace(b).real for b in self.blocks.values()))

    def dense(self) -> np.ndarray:
        """Full block-diagonal matrix on (M + C|B>)^{tensor N}, blank digit last per slot."""
        n, d = self.n_subsystems, self.dim_m
        if n > 3:
            raise DimensionMismatchError("dense reconstruction is limited to N <= 3")
        ext = d + 1
        out = np.zeros((ext ** n, ext ** n), dtype=complex)
        for s, blk in self.blocks.items():
            free = [k for k in range(n) if (k + 1) not in s]
            indices = []
            for digits in itertools.product(range(d), repeat=len(free)):
                slot_digits = [d] * n
                for k, digit in zip(free, digits):
                    slot_digits[k] = digit
                indices.append(sum(digit * ext ** (n - 1 - k) for k, digit in enumerate(slot_digits)))
            out[np.ix_(indices, indices)] = blk
        return out


def project_accessible(rho_tot: Union[DensityOperator, np.ndarray], P: SubspaceProjector) -> DensityOperator:
    """
    Compress a full-space state to the accessible subspace.

    Raises:
        OutsideTimeDomainError: If Tr[P rho P] < 1e-12
    """
    rho = rho_tot.matrix if isinstance(rho_tot, DensityOperator) else np.asarray(rho_tot)
    if rho.shape != (P.full_dim, P.full_dim):
        raise DimensionMismatchError(f"state of shape {rho.shape} does not live on dim {P.full_dim}")
    block = P.compress(rho)
    tr = float(np.trace(block).real)
    if tr < ACCESSIBLE_TRACE_FLOOR:
        raise OutsideTimeDomainError(tr)
    return DensityOperator(block, TraceClass.SUBNORMALIZED)


def extend_with_blank(rho_par: DensityOperator) -> BlankExtendedState:
    return BlankExtendedState(rho_par, max(0.0, 1.0 - rho_par.trace))


def composite_local_state(
    rho_tot: Union[DensityOperator, np.ndarray],
    P: SubspaceProjector,
    n_subsystems: int,
) -> CompositeLocalState:
    """
    Extract the blank-pattern blocks of an N-subsystem full-space state.

    The block for subsequence s sandwiches rho_tot between P on the slots
    outside s and (1 - P) on the slots in s, then traces the slots in s.

    Args:
        rho_tot: Unit-trace state on H^{tensor N}
        P: Accessible-subspace projector of one subsystem
        n_subsystems: N

    Returns:
        CompositeLocalState with all 2^N blocks
    """
    rho = rho_tot.matrix if isinstance(rho_tot, DensityOperator) else np.asarray(rho_tot)
    full = P.full_dim ** n_subsystems
    if rho.shape != (full, full):
        raise DimensionMismatchError(f"state of shape {rho.shape} does not live on {P.full_dim}^{n_subsystems}")

    V, W = P.basis, P.complement_basis
    m, m_perp = P.rank, W.shape[1]
    blocks: Dict[Subsequence, np.ndarray] = {}
    for s in subsequences(n_subsystems):
        side = m ** (n_subsystems - len(s))
        if s and m_perp == 0:
            blocks[s] = np.zeros((side, side), dtype=complex)
            continue
        factors = [W if (k + 1) in s else V for k in range(n_subsystems)]
        X = tensor(*factors)
        sandwiched = dagger(X) @ rho @ X
        dims = [m_perp if (k + 1) in s else m for k in range(n_subsystems)]
        blk = partial_trace(sandwiched, dims, [k for k in range(n_subsystems) if (k + 1) in s])
        blocks[s] = 0.5 * (blk + dagger(blk))

    state = CompositeLocalState(n_subsystems, m, blocks)
    logger.debug(f"composite local state N={n_subsystems}: total trace {state.total_trace():.15f}")
    return state


def expectation(
    state: Union[BlankExtendedState, CompositeLocalState],
    estimator: Union["LocalEstimator", "CompositeEstimator"],
) -> float:
    """
    Expectation Tr[rho A~] of a local estimator.

    For composite states the estimator is a weighted sum of product local
    estimators; each block contributes the product of the blank values on its
    blank slots times the accessible operators on the remaining slots.
    """
    if isinstance(state, BlankExtendedState):
        if hasattr(estimator, "terms"):
            raise DimensionMismatchError("composite estimator applied to a single-system state")
        if estimator.dim != state.accessible_block.dim:
            raise DimensionMismatchError(
                f"estimator dim {estimator.dim} vs state dim {state.accessible_block.dim}"
            )
        value = np.trace(estimator.accessible_block @ state.accessible_block.matrix)
        return float(value.real) + state.blank_weight * estimator.blank_value

    terms = estimator.terms if hasattr(estimator, "terms") else [(1.0, [estimator])]
    total = 0.0
    for weight, factors in terms:
        if len(factors) != state.n_subsystems:
            raise DimensionMismatchError(
                f"product estimator has {len(factors)} factors for N={state.n_subsystems}"
            )
        for s, blk in state.blocks.items():
            blank_factor = np.prod([factors[k - 1].blank_value for k in s]) if s else 1.0
            if blank_factor == 0.0:
                continue
            free = [factors[k].accessible_block for k in range(state.n_subsystems) if (k + 1) not in s]
            op_trace = np.trace(tensor(*free) @ blk) if free else blk[0, 0]
            total += weight * blank_factor * float(op_trace.real)
    return total


def encode_matrix(M: np.ndarray) -> List[List[List[str]]]:
    """Row-major [re, im] pairs written as shortest round-trip decimal strings."""
    return [[[repr(float(z.real)), repr(float(z.imag))] for z in row] for row in np.asarray(M, dtype=complex)]


def decode_matrix(rows) -> np.ndarray:
    """Inverse of encode_matrix; also accepts plain numbers or [re, im] number pairs."""
    out = []
    for row in rows:
        decoded = []
        for z in row:
            if isinstance(z, (list, tuple)):
                decoded.append(complex(float(z[0]), float(z[1])))
            else:
                decoded.append(complex(float(z)))
        out.append(decoded)
    return np.array(out, dtype=complex)


def subsequence_key(s: Subsequence) -> str:
    return ",".join(str(k) for k in s)


def parse_subsequence_key(key: str) -> Subsequence:
    return tuple(int(k) for k in key.split(",")) if key else ()


def composite_state_to_json(state: CompositeLocalState) -> dict:
    return {
        "dims": [state.dim_m] * state.n_subsystems,
        "blocks": {subsequence_key(s): encode_matrix(b) for s, b in state.blocks.items()},
    }


def composite_state_from_json(data: dict) -> CompositeLocalState:
    dims = data["dims"]
    if len(set(dims)) != 1:
        raise DimensionMismatchError(f"subsystems must share one accessible dimension, got {dims}")
    blocks = {parse_subsequence_key(k): decode_matrix(v) for k, v in data["blocks"].items()}
    return CompositeLocalState(len(dims), dims[0], blocks)
