"""
Fisher - Information functionals and Cramer-Rao attaining estimators.

This module handles:
1. Fisher information of normalized families
2. Local Fisher information of accessible (subnormalized) families, including
   the blank term carried by the probability that left the subspace
3. The unnormalized pure-state formula
4. Expected errors and linear calibration of (possibly biased) local estimators
5. The N-sample SLD

Estimators live on the blank-extended space M + C|B>, blank index last.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np
from scipy.linalg import block_diag

from .dynamics import ParametrizedFamily
from .errors import (
    DimensionMismatchError,
    InconsistentDerivativeError,
    InsensitiveEstimatorError,
    InvalidStateError,
    NotAvailableObservableError,
    OutsideTimeDomainError,
)
from .operator_core import merged_spectrum, require_hermitian, sld_decomposition, tensor
from .states import (
    ACCESSIBLE_TRACE_FLOOR,
    DensityOperator,
    SubspaceProjector,
    Subsequence,
    TRACE_TOL,
    subsequence_key,
)

logger = logging.getLogger(__name__)

EPS_BLANK = 1e-9  # below this, 1 - Tr rho_par is treated as zero
EPS_SENS = 1e-12  # smallest |dE/dg| for a usable estimator
NORMALIZATION_TOL = 1e-8
AVAILABLE_FORM_TOL = 1e-10

MatrixLike = Union[DensityOperator, np.ndarray]


def _as_matrix(x: MatrixLike) -> np.ndarray:
    return x.matrix if isinstance(x, DensityOperator) else np.asarray(x, dtype=complex)


class FisherFlag(Enum):
    """Diagnostics attached to a FisherReport."""
    BLANK_TERM_DROPPED = "blank_term_dropped"  # guarded rule replaced the blank term by 0
    NEAR_UNIT_TRACE = "near_unit_trace"  # 1 - Tr rho_par < EPS_BLANK
    INCONSISTENT_DERIVATIVE = "inconsistent_derivative"  # drho has kernel-kernel components
    SCALAR_BLOCK_DROPPED = "scalar_block_dropped"  # fully-blank block with p <= eps
    EMPTY_BLOCK_DROPPED = "empty_block_dropped"  # block with vanishing trace


@dataclass(frozen=True)
class LocalEstimator:
    """A~ = A_par + a_perp |B><B| on M + C|B>."""
    accessible_block: np.ndarray = field(repr=False)
    blank_value: float = 0.0

    def __post_init__(self):
        A = require_hermitian(self.accessible_block, "estimator")
        A.setflags(write=False)
        object.__setattr__(self, "accessible_block", A)
        object.__setattr__(self, "blank_value", float(np.real(self.blank_value)))

    @property
    def dim(self) -> int:
        return self.accessible_block.shape[0]

    def matrix(self) -> np.ndarray:
        return block_diag(self.accessible_block, np.array([[self.blank_value]]))

    def available_operator(self, P: SubspaceProjector) -> np.ndarray:
        """A = A_par + a_perp (1 - P) on the full space."""
        return P.embed(self.accessible_block) + self.blank_value * (np.eye(P.full_dim) - P.projector)

    @classmethod
    def from_available(cls, A: np.ndarray, P: SubspaceProjector) -> "LocalEstimator":
        """
        Map an available observable A_par + a_perp (1 - P) onto its local estimator.

        Raises:
            DimensionMismatchError: If A does not act on the full space of P
            NotAvailableObservableError: If A is not of that form
        """
        if np.shape(A) != (P.full_dim, P.full_dim):
            raise DimensionMismatchError(f"observable of shape {np.shape(A)} does not act on dimension {P.full_dim}")
        A = require_hermitian(A, "available observable")
        Q = np.eye(P.full_dim) - P.projector
        cross = P.projector @ A @ Q
        rank_q = P.full_dim - P.rank
        a_perp = float(np.trace(Q @ A).real / rank_q) if rank_q else 0.0
        residue = Q @ A @ Q - a_perp * Q
        scale = max(1.0, float(np.max(np.abs(A))))
        if max(np.max(np.abs(cross)), np.max(np.abs(residue))) > AVAILABLE_FORM_TOL * scale:
            raise NotAvailableObservableError("operator is not of the available form A_par + a_perp (1 - P)")
        return cls(P.compress(A), a_perp)

    @classmethod
    def identity(cls, dim: int) -> "LocalEstimator":
        return cls(np.eye(dim, dtype=complex), 1.0)

    @classmethod
    def blank_indicator(cls, dim: int) -> "LocalEstimator":
        return cls(np.zeros((dim, dim), dtype=complex), 1.0)


@dataclass(frozen=True)
class CompositeEstimator:
    """Weighted sum of product local estimators, one factor per subsystem."""
    terms: List[Tuple[float, List[LocalEstimator]]]

    @property
    def n_subsystems(self) -> int:
        return len(self.terms[0][1])

    def available_operator(self, P: SubspaceProjector) -> np.ndarray:
        return sum(w * tensor(*(f.available_operator(P) for f in factors)) for w, factors in self.terms)


@dataclass
class FisherReport:
    """Value of an information functional with its SLD and attaining estimator."""
    value: float
    sld: np.ndarray
    optimal_estimator: Optional[LocalEstimator]
    blank_term: float
    accessible_term: float
    support_rank: int
    flags: FrozenSet[FisherFlag] = frozenset()
    alternative_estimator: Optional[LocalEstimator] = None
    accessible_trace: float = 1.0
    block_values: Dict[Subsequence, float] = field(default_factory=dict)
    block_slds: Dict[Subsequence, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def extended_sld(self) -> Optional[np.ndarray]:
        """SLD of the blank-extended family (equals the optimal estimator)."""
        return None if self.optimal_estimator is None else self.optimal_estimator.matrix()

    def to_dict(self) -> Dict:
        """Plain-JSON representation, matrices as [re, im] pairs."""
        def pairs(M):
            return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(M)]

        out = {
            "value": self.value,
            "accessible_term": self.accessible_term,
            "blank_term": self.blank_term,
            "support_rank": self.support_rank,
            "accessible_trace": self.accessible_trace,
            "flags": sorted(f.value for f in self.flags),
            "sld": pairs(self.sld),
        }
        if self.optimal_estimator is not None:
            out["optimal_estimator"] = {
                "accessible_block": pairs(self.optimal_estimator.accessible_block),
                "blank_value": self.optimal_estimator.blank_value,
            }
        if self.block_values:
            out["blocks"] = {subsequence_key(s): v for s, v in self.block_values.items()}
        return out


def fisher_info(rho: MatrixLike, drho: MatrixLike) -> FisherReport:
    """
    Fisher information J = Tr[L^2 rho] of a normalized family.

    Raises:
        InvalidStateError: If rho is not unit trace
        InconsistentDerivativeError: If Tr[drho] is not ~0 (use local_fisher)
    """
    rho_m, drho_m = _as_matrix(rho), _as_matrix(drho)
    tr = float(np.trace(rho_m).real)
    if abs(tr - 1.0) > TRACE_TOL:
        raise InvalidStateError(f"fisher_info needs a unit-trace state, got trace {tr:.12g}")
    dtr = float(np.trace(drho_m).real)
    if abs(dtr) > NORMALIZATION_TOL:
        raise InconsistentDerivativeError(
            f"Tr[drho] = {dtr:.3e} for a normalized family; use local_fisher for subnormalized states"
        )

    sol = sld_decomposition(rho_m, drho_m)
    L = sol.sld
    value = float(np.trace(L @ L @ rho_m).real)
    mean = float(np.trace(rho_m @ L).real)
    if abs(mean) > NORMALIZATION_TOL:
        logger.debug(f"Tr[rho L] = {mean:.3e} for a normalized family")

    flags = frozenset() if sol.consistent else frozenset({FisherFlag.INCONSISTENT_DERIVATIVE})
    return FisherReport(
        value=value,
        sld=L,
        optimal_estimator=LocalEstimator(L, 0.0),
        blank_term=0.0,
        accessible_term=value,
        support_rank=sol.support_rank,
        flags=flags,
        alternative_estimator=LocalEstimator(L, 0.0),
        accessible_trace=tr,
    )


def _guarded_blank_term(first_moment: float, gap: float) -> Tuple[float, float, FrozenSet[FisherFlag]]:
    """
    Blank term first_moment^2 / gap and the blank coefficient c = first_moment / gap.

    When gap < EPS_BLANK the term is 0 if |first_moment| < sqrt(EPS_BLANK);
    otherwise the derivative cannot belong to a unit-trace family.
    """
    if gap >= EPS_BLANK:
        c = first_moment / gap
        return first_moment * c, c, frozenset()
    if abs(first_moment) < np.sqrt(EPS_BLANK):
        logger.debug(f"blank term dropped: 1 - Tr = {gap:.3e}, Tr[L rho] = {first_moment:.3e}")
        return 0.0, 0.0, frozenset({FisherFlag.BLANK_TERM_DROPPED, FisherFlag.NEAR_UNIT_TRACE})
    raise InconsistentDerivativeError(
        f"state has unit trace (1 - Tr = {gap:.3e}) but Tr[L rho] = {first_moment:.3e}"
    )


def _check_subnormalized_trace(tr: float):
    if tr <= 0.0 or tr > 1.0 + TRACE_TOL:
        raise InvalidStateError(f"accessible trace {tr:.12g} outside (0, 1]")
    if tr < ACCESSIBLE_TRACE_FLOOR:
        raise OutsideTimeDomainError(tr)


def local_fisher(rho_par: MatrixLike, drho_par: MatrixLike) -> FisherReport:
    """
    Local Fisher information of an accessible family.

    J = Tr[L^2 rho_par] + (Tr[L rho_par])^2 / (1 - Tr rho_par), with L the
    SLD of drho_par at rho_par on M. The optimal estimator is
    L - c|B><B| and the alternative one L + c P, c = Tr[L rho_par]/(1 - Tr rho_par).

    Args:
        rho_par: Accessible block, 0 < trace <= 1
        drho_par: Its g-derivative

    Returns:
        FisherReport with both summands and both attaining estimators
    """
    rho_m, drho_m = _as_matrix(rho_par), _as_matrix(drho_par)
    tr = float(np.trace(rho_m).real)
    _check_subnormalized_trace(tr)

    sol = sld_decomposition(rho_m, drho_m)
    L = sol.sld
    accessible = float(np.trace(L @ L @ rho_m).real)
    first_moment = float(np.trace(L @ rho_m).real)
    blank, c, flags = _guarded_blank_term(first_moment, 1.0 - tr)
    if not sol.consistent:
        flags = flags | {FisherFlag.INCONSISTENT_DERIVATIVE}

    return FisherReport(
        value=accessible + blank,
        sld=L,
        optimal_estimator=LocalEstimator(L, -c),
        blank_term=blank,
        accessible_term=accessible,
        support_rank=sol.support_rank,
        flags=frozenset(flags),
        alternative_estimator=LocalEstimator(L + c * np.eye(L.shape[0]), 0.0),
        accessible_trace=tr,
    )


def local_fisher_from_sld(rho_par: MatrixLike, L: np.ndarray) -> float:
    """Evaluate the local Fisher expression for a given (gauge-chosen) SLD."""
    rho_m = _as_matrix(rho_par)
    tr = float(np.trace(rho_m).real)
    _check_subnormalized_trace(tr)
    first_moment = float(np.trace(L @ rho_m).real)
    blank, _, _ = _guarded_blank_term(first_moment, 1.0 - tr)
    return float(np.trace(L @ L @ rho_m).real) + blank


def pure_state_fisher_terms(psi: np.ndarray, dpsi: np.ndarray) -> Tuple[float, float]:
    """
    Accessible and blank summands of the unnormalized pure-state formula.

    accessible = 4(<dpsi|dpsi> - Im^2 <psi|dpsi> / <psi|psi>)
    blank      = 4 Re^2 <psi|dpsi> / (1 - <psi|psi>)
    """
    psi = np.asarray(psi, dtype=complex).reshape(-1)
    dpsi = np.asarray(dpsi, dtype=complex).reshape(-1)
    if psi.shape != dpsi.shape:
        raise DimensionMismatchError(f"psi {psi.shape} and dpsi {dpsi.shape} differ")
    n = float(np.vdot(psi, psi).real)
    if n <= 0.0:
        raise InvalidStateError("zero-norm state vector")
    if n > 1.0 + TRACE_TOL:
        raise InvalidStateError(f"state norm {n:.12g} exceeds 1")
    overlap = np.vdot(psi, dpsi)
    accessible = 4.0 * (float(np.vdot(dpsi, dpsi).real) - overlap.imag ** 2 / n)
    # Tr[L rho] = 2 Re<psi|dpsi>
    blank, _, _ = _guarded_blank_term(2.0 * overlap.real, 1.0 - n)
    return accessible, blank


def pure_state_fisher(psi: np.ndarray, dpsi: np.ndarray) -> float:
    accessible, blank = pure_state_fisher_terms(psi, dpsi)
    return accessible + blank


@dataclass(frozen=True)
class EstimatorMoments:
    """Born-rule statistics of a local estimator at one value of g."""
    mean: float
    variance: float
    slope: float  # dE/dg
    delta_g: float


def estimator_moments(family: ParametrizedFamily, estimator: LocalEstimator, g: float) -> EstimatorMoments:
    """
    Mean, variance and sensitivity of a local estimator on an accessible family.

    Raises:
        InsensitiveEstimatorError: If |dE/dg| < EPS_SENS
    """
    rho, drho = family.at(g)
    if estimator.dim != rho.shape[0]:
        raise DimensionMismatchError(f"estimator dim {estimator.dim} vs state dim {rho.shape[0]}")
    A, a = estimator.accessible_block, estimator.blank_value
    blank = 1.0 - float(np.trace(rho).real)
    mean = float(np.trace(A @ rho).real) + a * blank
    second = float(np.trace(A @ A @ rho).real) + a * a * blank
    variance = max(second - mean * mean, 0.0)
    slope = float(np.trace(A @ drho).real) - a * float(np.trace(drho).real)
    if abs(slope) < EPS_SENS:
        raise InsensitiveEstimatorError(slope)
    return EstimatorMoments(mean, variance, slope, float(np.sqrt(variance) / abs(slope)))


def expected_error(family: ParametrizedFamily, estimator: LocalEstimator, g: float) -> float:
    """delta g = sqrt(V[A~]) / |dE[A~]/dg|."""
    return estimator_moments(family, estimator, g).delta_g


@dataclass(frozen=True)
class LinearCalibration:
    """f(x) = (x - offset) / slope + g0, locally unbiased at g0."""
    offset: float
    slope: float
    g0: float

    def __call__(self, x):
        result = (np.asarray(x, dtype=float) - self.offset) / self.slope + self.g0
        return float(result) if np.ndim(result) == 0 else result


def calibrate_linear(family: ParametrizedFamily, estimator: LocalEstimator, g0: float) -> LinearCalibration:
    moments = estimator_moments(family, estimator, g0)
    return LinearCalibration(moments.mean, moments.slope, g0)


def nsample_sld(L_single: np.ndarray, n: int) -> np.ndarray:
    """Sum of the n one-site embeddings of L on the n-fold tensor space."""
    if n < 1:
        raise DimensionMismatchError(f"number of samples must be positive, got {n}")
    L = np.asarray(L_single, dtype=complex)
    eye = np.eye(L.shape[0], dtype=complex)
    return sum(tensor(*([eye] * k + [L] + [eye] * (n - 1 - k))) for k in range(n))


def extended_state(rho_par: np.ndarray) -> np.ndarray:
    """Dense rho_par + (1 - Tr rho_par)|B><B|."""
    rho_par = np.asarray(rho_par, dtype=complex)
    return block_diag(rho_par, np.array([[1.0 - np.trace(rho_par).real]]))


def extended_derivative(drho_par: np.ndarray) -> np.ndarray:
    """Dense drho_par - Tr[drho_par]|B><B|."""
    drho_par = np.asarray(drho_par, dtype=complex)
    return block_diag(drho_par, np.array([[-np.trace(drho_par).real]]))


def measurement_fisher(rho_par: MatrixLike, drho_par: MatrixLike, estimator: LocalEstimator) -> float:
    """
    Classical Fisher information of the estimator's projective measurement.

    Never exceeds the local Fisher information; equal for the optimal estimator
    when its spectrum is non-degenerate.
    """
    rho_ext = extended_state(_as_matrix(rho_par))
    drho_ext = extended_derivative(_as_matrix(drho_par))
    _, projectors = merged_spectrum(estimator.matrix())
    value = 0.0
    for Pk in projectors:
        p = float(np.trace(Pk @ rho_ext).real)
        dp = float(np.trace(Pk @ drho_ext).real)
        if p > 1e-14:
            value += dp * dp / p
    return value


if __name__ == "__main__":
    # qubit rho(g) = (I + g sigma_z)/2 at g = 0
    sz = np.diag([1.0, -1.0]).astype(complex)
    report = fisher_info(np.eye(2) / 2, sz / 2)
    print(f"J = {report.value:.6f}, L =\n{report.sld.real}")
