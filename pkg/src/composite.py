"""
Composite - Fisher information of N subsystems observed through M.

This module handles:
1. Descendant blocks rho_[s] of the composite local state, computed either
   directly from the full-space state or by inclusion-exclusion over
   channel-evolved partial traces of the initial state
2. j_N: local Fisher information of the accessible operator with one global blank
3. J_N: sum of the per-block Fisher informations (always >= j_N)
4. The map R collapsing all blank-carrying blocks into one blank weight
"""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .config import worker_count
from .dynamics import LocalDynamics, central_difference, channel_tensor_apply, channel_tensor_derivative
from .errors import DimensionMismatchError, DirectPathUnavailableError, InvalidStateError, PositivityError
from .fisher import FisherFlag, FisherReport, local_fisher
from .operator_core import clip_psd, dagger, partial_trace, sld_decomposition, tensor
from .states import (
    BlankExtendedState,
    CompositeLocalState,
    DensityOperator,
    Subsequence,
    TraceClass,
    composite_local_state,
    subsequences,
)

logger = logging.getLogger(__name__)

N_MAX_DIRECT = 3
N_MAX_CHANNELS = 4
BLOCK_NEGATIVE_HARD = 1e-6  # min eigenvalue below -this is a bug
BLOCK_NEGATIVE_SOFT = 1e-9  # min eigenvalue below -this is logged
SCALAR_BLOCK_EPS = 1e-12
EMPTY_BLOCK_EPS = 1e-12
TOTAL_TRACE_TOL = 1e-9

Blocks = Dict[Subsequence, np.ndarray]


class DerivativeStrategy(Enum):
    """How g-derivatives of descendant blocks are obtained."""
    FINITE_DIFFERENCE = "finite_difference"
    ANALYTIC = "analytic"  # needs channels with exact derivatives


@dataclass(frozen=True)
class CompositeScenario:
    """N subsystems starting in a state on M^{tensor N}, each evolved by the same channel family."""
    n_subsystems: int
    initial_state: np.ndarray = field(repr=False)
    dynamics: LocalDynamics = field(repr=False)
    derivative: DerivativeStrategy = DerivativeStrategy.FINITE_DIFFERENCE
    name: str = ""

    def __post_init__(self):
        if self.n_subsystems < 1:
            raise DimensionMismatchError(f"N must be positive, got {self.n_subsystems}")
        side = self.dynamics.dim_m ** self.n_subsystems
        rho0 = DensityOperator(np.asarray(self.initial_state, dtype=complex), TraceClass.NORMALIZED)
        if rho0.dim != side:
            raise DimensionMismatchError(f"initial state dim {rho0.dim}, expected {side}")
        if self.derivative is DerivativeStrategy.ANALYTIC and not self.dynamics.analytic:
            raise DimensionMismatchError(f"dynamics {self.dynamics.name} provides no analytic derivatives")
        object.__setattr__(self, "initial_state", rho0.matrix)

    @property
    def dim_m(self) -> int:
        return self.dynamics.dim_m

    @classmethod
    def iid(cls, single_state: np.ndarray, n: int, dynamics: LocalDynamics, **kwargs) -> "CompositeScenario":
        single = np.asarray(single_state, dtype=complex)
        return cls(n, tensor(*([single] * n)), dynamics, **kwargs)

    @classmethod
    def from_ket(cls, psi: np.ndarray, n: int, dynamics: LocalDynamics, **kwargs) -> "CompositeScenario":
        psi = np.asarray(psi, dtype=complex).reshape(-1)
        return cls(n, np.outer(psi, psi.conj()), dynamics, **kwargs)


@dataclass
class DescendantSet:
    """Blocks rho_[s](g, t) and their g-derivatives."""
    n_subsystems: int
    dim_m: int
    blocks: Blocks = field(repr=False)
    derivatives: Blocks = field(default_factory=dict, repr=False)

    def total_trace(self) -> float:
        return float(sum(np.trace(b).real for b in self.blocks.values()))

    def as_local_state(self) -> CompositeLocalState:
        return CompositeLocalState(self.n_subsystems, self.dim_m, dict(self.blocks))


def _remaining(n: int, removed: Tuple[int, ...]) -> List[int]:
    return [k for k in range(1, n + 1) if k not in removed]


def _evolve_descendants(
    rho0: np.ndarray, n: int, d: int, apply: Callable[[int, np.ndarray], np.ndarray]
) -> Blocks:
    """
    Gamma^{tensor (N-m)}[Tr_J rho0] for every subsequence J, each evolved once.

    The result for J lives on the slots outside J, in increasing order.
    """
    evolved: Blocks = {}
    for J in subsequences(n):
        reduced = partial_trace(rho0, [d] * n, [k - 1 for k in J])
        evolved[J] = apply(n - len(J), reduced)
    return evolved


def _inclusion_exclusion(evolved: Blocks, n: int, d: int) -> Blocks:
    """
    rho_[s] = sum over J subset of s of (-1)^(|s|-|J|) Tr_{s-J}[evolved[J]].
    """
    blocks: Blocks = {}
    for s in subsequences(n):
        side = d ** (n - len(s))
        total = np.zeros((side, side), dtype=complex)
        for m in range(len(s) + 1):
            sign = -1.0 if (len(s) - m) % 2 else 1.0
            for J in itertools.combinations(s, m):
                rem = _remaining(n, J)
                positions = [rem.index(k) for k in s if k not in J]
                total += sign * partial_trace(evolved[J], [d] * len(rem), positions)
        blocks[s] = total
    return blocks


def _hermitian_part(blocks: Blocks) -> Blocks:
    return {s: 0.5 * (b + dagger(b)) for s, b in blocks.items()}


def _raw_blocks_via_channels(scenario: CompositeScenario, g: float, t: float) -> Blocks:
    ch = scenario.dynamics.channel(g, t)
    evolved = _evolve_descendants(
        scenario.initial_state, scenario.n_subsystems, scenario.dim_m,
        lambda k, X: channel_tensor_apply(ch, k, X),
    )
    return _hermitian_part(_inclusion_exclusion(evolved, scenario.n_subsystems, scenario.dim_m))


def _clip_blocks(raw: Blocks) -> Blocks:
    """Positivity-clip every block; clearly negative blocks are an error."""
    clipped: Blocks = {}
    for s, blk in raw.items():
        min_eig = float(np.linalg.eigvalsh(blk)[0])
        if min_eig < -BLOCK_NEGATIVE_HARD:
            raise PositivityError(s, min_eig)
        if min_eig < -BLOCK_NEGATIVE_SOFT:
            logger.warning(f"block {list(s)} slightly negative (min eigenvalue {min_eig:.3e}); clipping")
        clipped[s] = clip_psd(blk, tol=BLOCK_NEGATIVE_HARD)
    return clipped


def _finish(n: int, d: int, raw: Blocks, derivatives: Blocks) -> DescendantSet:
    desc = DescendantSet(n, d, _clip_blocks(raw), _hermitian_part(derivatives))
    total = desc.total_trace()
    if abs(total - 1.0) > 1e-6:
        raise InvalidStateError(f"descendant block traces sum to {total:.12g}")
    if abs(total - 1.0) > TOTAL_TRACE_TOL:
        logger.warning(f"descendant block traces sum to {total:.12g}")
    return desc


def descendants_via_channels(scenario: CompositeScenario, g: float, t: float) -> DescendantSet:
    """
    Descendant blocks from single-subsystem channels only.

    Each Gamma^{tensor (N-m)}[Tr_J rho(0)] is evolved once per (g, t) and reused
    by every block containing J. Derivatives are taken after the
    inclusion-exclusion, analytically or by Richardson central differences.
    """
    n, d = scenario.n_subsystems, scenario.dim_m
    if n > N_MAX_CHANNELS:
        raise DimensionMismatchError(f"channel path supports N <= {N_MAX_CHANNELS}, got {n}")

    if scenario.derivative is DerivativeStrategy.ANALYTIC:
        ch = scenario.dynamics.channel(g, t)
        evolved = _evolve_descendants(
            scenario.initial_state, n, d, lambda k, X: channel_tensor_apply(ch, k, X)
        )
        devolved = _evolve_descendants(
            scenario.initial_state, n, d,
            lambda k, X: channel_tensor_derivative(ch, k, X),
        )
        raw = _hermitian_part(_inclusion_exclusion(evolved, n, d))
        derivatives = _inclusion_exclusion(devolved, n, d)
    else:
        raw = _raw_blocks_via_channels(scenario, g, t)
        derivatives = central_difference(lambda gg: _raw_blocks_via_channels(scenario, gg, t), g)

    return _finish(n, d, raw, derivatives)


def descendants_direct(scenario: CompositeScenario, g: float, t: float) -> DescendantSet:
    """
    Descendant blocks from the full-space state U^{tensor N} rho_tot(0) U^dagger{tensor N}.

    Raises:
        DirectPathUnavailableError: Without a full-space model, or for N > 3
    """
    n, d = scenario.n_subsystems, scenario.dim_m
    full = scenario.dynamics.full_space
    if full is None:
        raise DirectPathUnavailableError(
            f"{scenario.dynamics.name} has no full-space model; use descendants_via_channels"
        )
    if n > N_MAX_DIRECT:
        raise DirectPathUnavailableError(f"direct path supports N <= {N_MAX_DIRECT}; use descendants_via_channels")

    P = full.projector
    VN = tensor(*([P.basis] * n))
    rho_tot0 = VN @ scenario.initial_state @ dagger(VN)

    def blocks_at(gg: float) -> Blocks:
        UN = tensor(*([full.propagator(gg, t)] * n))
        return composite_local_state(UN @ rho_tot0 @ dagger(UN), P, n).blocks

    raw = blocks_at(g)
    derivatives = central_difference(blocks_at, g)
    return _finish(n, d, raw, derivatives)


def _block_fisher(s: Subsequence, blk: np.ndarray, dblk: np.ndarray):
    """(J_[s], SLD, flags) of one block."""
    p = float(np.trace(blk).real)
    if blk.shape == (1, 1):
        if p > SCALAR_BLOCK_EPS:
            dp = float(dblk[0, 0].real)
            return dp * dp / p, np.array([[dp / p]], dtype=complex), frozenset()
        return 0.0, np.zeros((1, 1), dtype=complex), frozenset({FisherFlag.SCALAR_BLOCK_DROPPED})
    if p <= EMPTY_BLOCK_EPS:
        return 0.0, np.zeros_like(blk), frozenset({FisherFlag.EMPTY_BLOCK_DROPPED})
    sol = sld_decomposition(blk, dblk)
    value = float(np.trace(blk @ sol.sld @ sol.sld).real)
    flags = frozenset() if sol.consistent else frozenset({FisherFlag.INCONSISTENT_DERIVATIVE})
    return value, sol.sld, flags


def _resolve_descendants(scenario, g, t, method: str, descendants: Optional[DescendantSet]) -> DescendantSet:
    if descendants is not None:
        return descendants
    if method == "direct":
        return descendants_direct(scenario, g, t)
    if method == "channels":
        return descendants_via_channels(scenario, g, t)
    raise ValueError(f"unknown descendant method {method!r}")


def j_N(
    scenario: CompositeScenario,
    g: float,
    t: float,
    descendants: Optional[DescendantSet] = None,
    method: str = "channels",
) -> FisherReport:
    """Local Fisher information of Gamma^{tensor N}[rho(0)] extended by a single blank state."""
    desc = _resolve_descendants(scenario, g, t, method, descendants)
    return local_fisher(desc.blocks[()], desc.derivatives[()])


def J_N(
    scenario: CompositeScenario,
    g: float,
    t: float,
    descendants: Optional[DescendantSet] = None,
    method: str = "channels",
) -> FisherReport:
    """
    Sum over all blocks of Tr[rho_[s] L_[s]^2], with the per-block breakdown.

    Fully-blank (scalar) blocks contribute (dp)^2 / p. In the report,
    accessible_term is the empty-subsequence block and blank_term the rest.
    """
    desc = _resolve_descendants(scenario, g, t, method, descendants)
    subs = subsequences(desc.n_subsystems)

    def evaluate(s: Subsequence):
        return _block_fisher(s, desc.blocks[s], desc.derivatives[s])

    workers = min(worker_count(), len(subs))
    if desc.n_subsystems >= 3 and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, subs))
    else:
        results = [evaluate(s) for s in subs]

    block_values = {s: r[0] for s, r in zip(subs, results)}
    block_slds = {s: r[1] for s, r in zip(subs, results)}
    flags = frozenset().union(*(r[2] for r in results))
    for s, r in zip(subs, results):
        if FisherFlag.SCALAR_BLOCK_DROPPED in r[2] or FisherFlag.EMPTY_BLOCK_DROPPED in r[2]:
            logger.debug(f"block {list(s)} has vanishing weight; contribution set to 0")

    total = float(sum(block_values[s] for s in subs))
    empty = desc.blocks[()]
    return FisherReport(
        value=total,
        sld=block_slds[()],
        optimal_estimator=None,
        blank_term=total - block_values[()],
        accessible_term=block_values[()],
        support_rank=int(np.linalg.matrix_rank(empty)) if np.trace(empty).real > 0 else 0,
        flags=flags,
        accessible_trace=float(np.trace(empty).real),
        block_values=block_values,
        block_slds=block_slds,
    )


@dataclass
class CompositeFisher:
    """j_N and J_N evaluated on one shared descendant set."""
    j: FisherReport
    J: FisherReport
    descendants: DescendantSet = field(repr=False)


def composite_fisher(scenario: CompositeScenario, g: float, t: float, method: str = "channels") -> CompositeFisher:
    desc = _resolve_descendants(scenario, g, t, method, None)
    return CompositeFisher(j_N(scenario, g, t, desc), J_N(scenario, g, t, desc), desc)


def monotonicity_map_R(descendants: DescendantSet) -> BlankExtendedState:
    """rho_par^(N) + (1 - Tr rho_par^(N))|B><B|."""
    accessible = DensityOperator(descendants.blocks[()], TraceClass.SUBNORMALIZED)
    return BlankExtendedState(accessible, max(0.0, 1.0 - accessible.trace))
