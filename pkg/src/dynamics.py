"""
Dynamics - Time evolution on the accessible subspace.

This module handles:
1. Parameter-dependent Hamiltonians, Hermitian or effective non-Hermitian
2. Non-Hermitian evolution rho -> K rho K^dagger with K = exp(-iHt)
3. Quantum channels Gamma(g, t) as column-stacking superoperators
4. Lindblad generators and channel tensor powers
5. g-derivatives, analytic (Frechet derivative of expm) or by finite differences

hbar = 1 throughout.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import expm_frechet

from .errors import (
    DimensionMismatchError,
    InvalidStateError,
    LocalFisherError,
    NonDissipativeError,
    NonHermitianError,
    OutsideTimeDomainError,
)
from .operator_core import (
    dagger,
    hermitian_eig,
    hermiticity_defect,
    is_hermitian,
    matrix_exp,
    psd_sqrt,
    unvec,
    vec,
)
from .states import ACCESSIBLE_TRACE_FLOOR, DensityOperator, SubspaceProjector, TraceClass

logger = logging.getLogger(__name__)

FD_MIN_STEP = 1e-6
FD_REL_STEP = 1e-6
TRACE_GROWTH_TOL = 1e-6
CHOI_TOL = 1e-10

MatrixOrBlocks = Union[np.ndarray, Dict[tuple, np.ndarray]]


def finite_difference_step(g: float) -> float:
    return max(FD_MIN_STEP, FD_REL_STEP * abs(g))


def _combine(coefficients: Sequence[float], values: Sequence[MatrixOrBlocks]) -> MatrixOrBlocks:
    if isinstance(values[0], dict):
        return {k: sum(c * v[k] for c, v in zip(coefficients, values)) for k in values[0]}
    return sum(c * np.asarray(v) for c, v in zip(coefficients, values))


def central_difference(
    f: Callable[[float], MatrixOrBlocks],
    g: float,
    h: Optional[float] = None,
    richardson: bool = True,
) -> MatrixOrBlocks:
    """
    Derivative of f at g by central differences.

    With richardson=True the steps h and h/2 are combined as
    (4 D(h/2) - D(h)) / 3, cancelling the O(h^2) error term.
    f may return a matrix or a dict of matrices.
    """
    h = finite_difference_step(g) if h is None else h
    if not richardson:
        return _combine([1 / (2 * h), -1 / (2 * h)], [f(g + h), f(g - h)])
    values = [f(g + h), f(g - h), f(g + h / 2), f(g - h / 2)]
    # (4 D(h/2) - D(h)) / 3 expanded over the four samples
    coefficients = [-1 / (6 * h), 1 / (6 * h), 4 / (3 * h), -4 / (3 * h)]
    return _combine(coefficients, values)


@dataclass(frozen=True)
class HamiltonianFamily:
    """g -> H(g), with an optional exact derivative."""
    dim: int
    builder: Callable[[float], np.ndarray] = field(repr=False)
    hermitian: bool = True
    derivative_builder: Optional[Callable[[float], np.ndarray]] = field(default=None, repr=False)
    interval: Tuple[float, float] = (-np.inf, np.inf)  # admissible values of g
    name: str = "custom"

    @classmethod
    def from_polynomial(
        cls,
        coefficients: Sequence[np.ndarray],
        hermitian: bool = True,
        interval: Tuple[float, float] = (-np.inf, np.inf),
        name: str = "custom",
    ) -> "HamiltonianFamily":
        """H(g) = sum_k g^k C_k."""
        coeffs = [np.asarray(c, dtype=complex) for c in coefficients]
        if not coeffs:
            raise DimensionMismatchError("polynomial Hamiltonian needs at least one coefficient")
        dim = coeffs[0].shape[0]
        if any(c.shape != (dim, dim) for c in coeffs):
            raise DimensionMismatchError("polynomial coefficients must share one square shape")

        def builder(g: float) -> np.ndarray:
            return sum(c * g ** k for k, c in enumerate(coeffs))

        def derivative(g: float) -> np.ndarray:
            if len(coeffs) == 1:
                return np.zeros((dim, dim), dtype=complex)
            return sum(k * c * g ** (k - 1) for k, c in enumerate(coeffs) if k > 0)

        return cls(dim, builder, hermitian, derivative, interval, name)

    def _check_g(self, g: float):
        lo, hi = self.interval
        if not lo <= g <= hi:
            raise LocalFisherError(f"g={g!r} outside the admissible interval [{lo}, {hi}] of {self.name}")

    def matrix(self, g: float) -> np.ndarray:
        self._check_g(g)
        H = np.asarray(self.builder(g), dtype=complex)
        if H.shape != (self.dim, self.dim):
            raise DimensionMismatchError(f"{self.name} built shape {H.shape}, expected dim {self.dim}")
        if self.hermitian and not is_hermitian(H):
            raise NonHermitianError(hermiticity_defect(H), f"Hamiltonian {self.name}")
        return H

    def derivative(self, g: float) -> np.ndarray:
        if self.derivative_builder is not None:
            self._check_g(g)
            return np.asarray(self.derivative_builder(g), dtype=complex)
        return central_difference(self.matrix, g)


def propagator(H: HamiltonianFamily, g: float, t: float) -> np.ndarray:
    """K = exp(-i H(g) t)."""
    if t < 0:
        raise LocalFisherError(f"evolution time must be non-negative, got {t}")
    return matrix_exp(-1j * t * H.matrix(g))


def propagator_with_derivative(H: HamiltonianFamily, g: float, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """(K, dK/dg) for K = exp(-i H(g) t), via the Frechet derivative of expm."""
    if t < 0:
        raise LocalFisherError(f"evolution time must be non-negative, got {t}")
    X = -1j * t * H.matrix(g)
    E = -1j * t * H.derivative(g)
    K, dK = expm_frechet(X, E)
    return K, dK


def evolve_ket(H: HamiltonianFamily, psi0: np.ndarray, g: float, t: float) -> Tuple[np.ndarray, np.ndarray]:
    """Evolved (possibly unnormalized) ket and its g-derivative."""
    K, dK = propagator_with_derivative(H, g, t)
    psi0 = np.asarray(psi0, dtype=complex).reshape(-1)
    return K @ psi0, dK @ psi0


def evolve_nonhermitian(H: HamiltonianFamily, rho0: DensityOperator, g: float, t: float) -> DensityOperator:
    """
    rho(t) = exp(-iHt) rho0 exp(iH^dagger t).

    Raises:
        NonDissipativeError: If the trace grows by more than 1e-6
        OutsideTimeDomainError: If the trace has decayed below 1e-12
    """
    if rho0.dim != H.dim:
        raise DimensionMismatchError(f"state dim {rho0.dim} vs Hamiltonian dim {H.dim}")
    K = propagator(H, g, t)
    rho = K @ rho0.matrix @ dagger(K)
    tr = float(np.trace(rho).real)
    if tr > rho0.trace + TRACE_GROWTH_TOL:
        raise NonDissipativeError(tr)
    if tr < ACCESSIBLE_TRACE_FLOOR:
        raise OutsideTimeDomainError(tr)
    return DensityOperator(rho, TraceClass.SUBNORMALIZED)


def kraus_superop(K: np.ndarray) -> np.ndarray:
    """Superoperator of X -> K X K^dagger: conj(K) kron K."""
    return np.kron(np.conj(K), K)


@dataclass(frozen=True)
class QuantumChannel:
    """Completely positive map on operators on M, with an optional g-derivative."""
    dim_m: int
    g: float
    t: float
    superop: np.ndarray = field(repr=False)  # dim_m^2 x dim_m^2, column stacking
    dsuperop: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = self.dim_m ** 2
        if self.superop.shape != (n, n):
            raise DimensionMismatchError(f"superoperator shape {self.superop.shape}, expected {(n, n)}")
        lam = np.linalg.eigvalsh(self.choi())
        scale = max(1.0, float(np.abs(lam).max()))
        if lam[0] < -CHOI_TOL * scale:
            raise InvalidStateError(f"channel is not completely positive: Choi eigenvalue {lam[0]:.3e}")

    def apply(self, X: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(X), self.dim_m)

    def apply_derivative(self, X: np.ndarray) -> np.ndarray:
        if self.dsuperop is None:
            raise LocalFisherError("channel carries no analytic derivative")
        return unvec(self.dsuperop @ vec(X), self.dim_m)

    def choi(self) -> np.ndarray:
        """Choi matrix sum_ij E_ij kron Gamma(E_ij)."""
        d = self.dim_m
        S4 = self.superop.reshape(d, d, d, d)  # S4[l, k, j, i] = Gamma(E_ij)[k, l]
        return S4.transpose(3, 1, 2, 0).reshape(d * d, d * d)

    def is_completely_positive(self, tol: float = CHOI_TOL) -> bool:
        return bool(np.linalg.eigvalsh(self.choi())[0] >= -tol)

    def compose(self, other: "QuantumChannel") -> "QuantumChannel":
        """self after other."""
        if other.dim_m != self.dim_m:
            raise DimensionMismatchError("cannot compose channels on different spaces")
        dS = None
        if self.dsuperop is not None and other.dsuperop is not None:
            dS = self.dsuperop @ other.superop + self.superop @ other.dsuperop
        return QuantumChannel(self.dim_m, self.g, self.t + other.t, self.superop @ other.superop, dS)


def channel_from_contraction(
    K: np.ndarray, g: float, t: float, dK: Optional[np.ndarray] = None
) -> QuantumChannel:
    """Channel X -> K X K^dagger, with derivative from dK when given."""
    dS = None if dK is None else np.kron(np.conj(dK), K) + np.kron(np.conj(K), dK)
    return QuantumChannel(K.shape[0], g, t, kraus_superop(K), dS)


def channel_from_unitary(H_full: HamiltonianFamily, P: SubspaceProjector, g: float, t: float) -> QuantumChannel:
    """
    Gamma(g, t)[X] = P U(t) X U(t)^dagger P compressed to M.

    Raises:
        NonHermitianError: If the full-space Hamiltonian is not Hermitian
    """
    if not H_full.hermitian:
        raise NonHermitianError(float("nan"), "full-space Hamiltonian (flagged non-Hermitian)")
    if H_full.dim != P.full_dim:
        raise DimensionMismatchError(f"Hamiltonian dim {H_full.dim} vs projector full_dim {P.full_dim}")
    U, dU = propagator_with_derivative(H_full, g, t)
    V = P.basis
    return channel_from_contraction(dagger(V) @ U @ V, g, t, dagger(V) @ dU @ V)


@dataclass(frozen=True)
class LindbladGenerator:
    """Superoperator T_g with Gamma(g, t) = exp(t T_g)."""
    dim_m: int
    superop: np.ndarray = field(repr=False)
    dsuperop: Optional[np.ndarray] = field(default=None, repr=False)
    g: float = 0.0

    def apply(self, X: np.ndarray) -> np.ndarray:
        return unvec(self.superop @ vec(X), self.dim_m)

    @staticmethod
    def _hamiltonian_part(H: np.ndarray) -> np.ndarray:
        # X -> -i(H X - X H^dagger)
        eye = np.eye(H.shape[0])
        return -1j * np.kron(eye, H) + 1j * np.kron(np.conj(H), eye)

    @classmethod
    def from_effective_hamiltonian(cls, H: HamiltonianFamily, g: float) -> "LindbladGenerator":
        """T_g[X] = -i(H X - X H^dagger) for an effective (dissipative) Hamiltonian."""
        return cls(
            H.dim,
            cls._hamiltonian_part(H.matrix(g)),
            cls._hamiltonian_part(H.derivative(g)),
            g,
        )

    @classmethod
    def from_operators(
        cls,
        hamiltonian: np.ndarray,
        jump_ops: Sequence[np.ndarray] = (),
        rates: Optional[Sequence[float]] = None,
        dhamiltonian: Optional[np.ndarray] = None,
        g: float = 0.0,
    ) -> "LindbladGenerator":
        """
        GKLS generator -i[H, X] + sum_k r_k (L_k X L_k^dagger - {L_k^dagger L_k, X}/2).

        H may be non-Hermitian, in which case its anti-Hermitian part acts as
        decay out of M. Only H carries g-dependence (through dhamiltonian).
        """
        H = np.asarray(hamiltonian, dtype=complex)
        d = H.shape[0]
        rates = [1.0] * len(jump_ops) if rates is None else list(rates)
        if len(rates) != len(jump_ops):
            raise DimensionMismatchError("one rate per jump operator is required")
        eye = np.eye(d)
        S = cls._hamiltonian_part(H)
        for r, L in zip(rates, jump_ops):
            L = np.asarray(L, dtype=complex)
            LdL = dagger(L) @ L
            S = S + r * (np.kron(np.conj(L), L) - 0.5 * np.kron(eye, LdL) - 0.5 * np.kron(LdL.T, eye))
        dS = None if dhamiltonian is None else cls._hamiltonian_part(np.asarray(dhamiltonian, dtype=complex))
        return cls(d, S, dS, g)


def channel_from_lindblad(T: LindbladGenerator, t: float) -> QuantumChannel:
    """Gamma(g, t) = exp(t T_g), with exact g-derivative when T carries one."""
    if t < 0:
        raise LocalFisherError(f"evolution time must be non-negative, got {t}")
    if T.dsuperop is None:
        return QuantumChannel(T.dim_m, T.g, t, matrix_exp(t * T.superop))
    S, dS = expm_frechet(t * T.superop, t * T.dsuperop)
    return QuantumChannel(T.dim_m, T.g, t, S, dS)


def apply_slotwise(superops: Sequence[Optional[np.ndarray]], X: np.ndarray, dim_m: int) -> np.ndarray:
    """
    Apply one superoperator per tensor slot of X (None leaves a slot alone).

    X lives on M^{tensor k} with k = len(superops); each superoperator acts on
    its slot through a tensor contraction, never forming the k-fold Kronecker.
    """
    k = len(superops)
    d = dim_m
    X = np.asarray(X, dtype=complex)
    if X.shape != (d ** k, d ** k):
        raise DimensionMismatchError(f"operand shape {X.shape} does not fit {k} slots of dim {d}")
    if k == 0:
        return X
    T = X.reshape((d,) * (2 * k))
    for slot, S in enumerate(superops):
        if S is None:
            continue
        # S4[a, b, a', b'] = S[b*d + a, b'*d + a'] under column stacking
        S4 = np.asarray(S).reshape(d, d, d, d).transpose(1, 0, 3, 2)
        T = np.tensordot(S4, T, axes=([2, 3], [slot, slot + k]))
        T = np.moveaxis(T, [0, 1], [slot, slot + k])
    return T.reshape(d ** k, d ** k)


def channel_tensor_apply(ch: QuantumChannel, k: int, X: np.ndarray) -> np.ndarray:
    """Gamma^{tensor k}[X]."""
    return apply_slotwise([ch.superop] * k, X, ch.dim_m)


def channel_tensor_derivative(ch: QuantumChannel, k: int, X: np.ndarray) -> np.ndarray:
    """d/dg Gamma^{tensor k}[X]: product rule over the k slots."""
    if ch.dsuperop is None:
        raise LocalFisherError("channel carries no analytic derivative")
    out = np.zeros_like(np.asarray(X, dtype=complex))
    for slot in range(k):
        ops = [ch.superop] * k
        ops[slot] = ch.dsuperop
        out = out + apply_slotwise(ops, X, ch.dim_m)
    return out


def dilate_contraction(K: np.ndarray) -> np.ndarray:
    """
    Unitary dilation [[K, D*], [D, -K^dagger]] of a contraction K.

    D = sqrt(1 - K^dagger K) and D* = sqrt(1 - K K^dagger). Compressing the
    dilation to the first block gives back K.

    Raises:
        NonDissipativeError: If K is not a contraction
    """
    K = np.asarray(K, dtype=complex)
    eye = np.eye(K.shape[0])
    defect = eye - dagger(K) @ K
    lam, _ = hermitian_eig(defect)
    if lam[-1] < -1e-10:
        raise NonDissipativeError(float(1.0 - lam[-1]))
    top = np.hstack([K, psd_sqrt(eye - K @ dagger(K))])
    bottom = np.hstack([psd_sqrt(defect), -dagger(K)])
    return np.vstack([top, bottom])


@dataclass(frozen=True)
class FullSpaceEvolution:
    """Unitary evolution on the full single-subsystem space H, with the projector onto M."""
    projector: SubspaceProjector
    propagator: Callable[[float, float], np.ndarray] = field(repr=False)  # (g, t) -> U


@dataclass(frozen=True)
class ParametrizedFamily:
    """g -> state on M, with an optional analytic derivative."""
    state: Callable[[float], np.ndarray] = field(repr=False)
    derivative: Optional[Callable[[float], np.ndarray]] = field(default=None, repr=False)
    name: str = ""

    def at(self, g: float) -> Tuple[np.ndarray, np.ndarray]:
        """(rho, drho) at g; finite differences when no analytic derivative exists."""
        rho = np.asarray(self.state(g), dtype=complex)
        if self.derivative is not None:
            drho = np.asarray(self.derivative(g), dtype=complex)
        else:
            drho = central_difference(self.state, g)
        return 0.5 * (rho + dagger(rho)), 0.5 * (drho + dagger(drho))


@dataclass(frozen=True)
class LocalDynamics:
    """Single-subsystem dynamics: the channel family on M and, if known, the full-space evolution."""
    name: str
    dim_m: int
    channel_builder: Callable[[float, float], QuantumChannel] = field(repr=False)
    full_space: Optional[FullSpaceEvolution] = None
    analytic: bool = False  # channels carry exact g-derivatives

    def channel(self, g: float, t: float) -> QuantumChannel:
        return self.channel_builder(g, t)

    def accessible_family(self, rho0: np.ndarray, t: float) -> ParametrizedFamily:
        """g -> Gamma(g, t)[rho0] for an initial state on M."""
        rho0 = np.asarray(rho0, dtype=complex)

        def state(g: float) -> np.ndarray:
            return self.channel(g, t).apply(rho0)

        derivative = None
        if self.analytic:
            def derivative(g: float) -> np.ndarray:
                return self.channel(g, t).apply_derivative(rho0)

        return ParametrizedFamily(state, derivative, name=f"{self.name}@t={t!r}")

    @classmethod
    def from_effective_hamiltonian(cls, H: HamiltonianFamily, name: Optional[str] = None) -> "LocalDynamics":
        """Evolution on M by a (possibly non-Hermitian) effective Hamiltonian."""
        d = H.dim

        def channel(g: float, t: float) -> QuantumChannel:
            return channel_from_lindblad(LindbladGenerator.from_effective_hamiltonian(H, g), t)

        def dilated(g: float, t: float) -> np.ndarray:
            return dilate_contraction(propagator(H, g, t))

        full = FullSpaceEvolution(SubspaceProjector.from_indices(2 * d, list(range(d))), dilated)
        return cls(name or H.name, d, channel, full, analytic=True)

    @classmethod
    def from_full_hamiltonian(
        cls, H_full: HamiltonianFamily, P: SubspaceProjector, name: Optional[str] = None
    ) -> "LocalDynamics":
        """Hermitian evolution on the full space H, observed on M."""
        if not H_full.hermitian:
            raise NonHermitianError(float("nan"), "full-space Hamiltonian (flagged non-Hermitian)")

        def channel(g: float, t: float) -> QuantumChannel:
            return channel_from_unitary(H_full, P, g, t)

        def unitary(g: float, t: float) -> np.ndarray:
            return propagator(H_full, g, t)

        return cls(name or H_full.name, P.rank, channel, FullSpaceEvolution(P, unitary), analytic=True)

    @classmethod
    def from_lindblad(
        cls, generator: Callable[[float], LindbladGenerator], dim_m: int, name: str = "lindblad"
    ) -> "LocalDynamics":
        """Evolution by a g-dependent Lindblad generator; no full-space model."""
        at_zero = generator(0.0)

        def channel(g: float, t: float) -> QuantumChannel:
            return channel_from_lindblad(generator(g), t)

        return cls(name, dim_m, channel, None, analytic=at_zero.dsuperop is not None)
