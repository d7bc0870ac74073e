"""
Scenarios - Preset models with closed-form results.

Presets:
- two_level_single / two_level_iid2 / two_level_ent2: the decaying two-level
  system H = -i diag(Gamma_+, Gamma_-) + g sigma_x on M = span{|+>, |->},
  for one subsystem, the pair |++> and the entangled pair (|+-> + |-+>)/sqrt(2)
- leaky_qutrit: a Hermitian three-level system whose state leaks out of
  M = span{|0>, |1>} through a g-dependent coupling

The closed forms are leading order in g; comparisons against the numerics
budget the O(g) remainder in their tolerances.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .composite import CompositeScenario, DerivativeStrategy
from .config import CompositeOptions, ModelSpec
from .dynamics import HamiltonianFamily, LocalDynamics, evolve_ket
from .errors import ConfigurationError, DimensionMismatchError, LocalFisherError
from .fisher import LocalEstimator
from .states import SubspaceProjector, Subsequence, decode_matrix

logger = logging.getLogger(__name__)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

KET_PLUS = np.array([1, 0], dtype=complex)
KET_MINUS = np.array([0, 1], dtype=complex)


@dataclass(frozen=True)
class TwoLevelDecayModel:
    """Two levels |+>, |-> decaying at rates Gamma_+ != Gamma_-, mixed by g sigma_x."""
    gamma_plus: float = 2.0
    gamma_minus: float = 1.0

    def __post_init__(self):
        if not (self.gamma_plus > 0 and self.gamma_minus > 0):
            raise LocalFisherError("decay rates must be positive")
        if self.gamma_plus == self.gamma_minus:
            raise LocalFisherError("gamma_plus and gamma_minus must differ")

    def rate(self, sign: int) -> float:
        return self.gamma_plus if sign > 0 else self.gamma_minus

    def d(self, t):
        """(e^{-Gamma_+ t} - e^{-Gamma_- t}) / (Gamma_+ - Gamma_-)."""
        t = np.asarray(t, dtype=float)
        value = (np.exp(-self.gamma_plus * t) - np.exp(-self.gamma_minus * t)) / (self.gamma_plus - self.gamma_minus)
        return float(value) if value.ndim == 0 else value

    def survival(self, t, sign: int = 1):
        """<+-(t)|+-(t)> to leading order: e^{-2 Gamma_+- t}."""
        value = np.exp(-2.0 * self.rate(sign) * np.asarray(t, dtype=float))
        return float(value) if np.ndim(value) == 0 else value

    def hamiltonian(self) -> HamiltonianFamily:
        C0 = -1j * np.diag([self.gamma_plus, self.gamma_minus]).astype(complex)
        return HamiltonianFamily.from_polynomial([C0, SIGMA_X], hermitian=False, name="two_level_decay")

    def local_dynamics(self) -> LocalDynamics:
        return LocalDynamics.from_effective_hamiltonian(self.hamiltonian(), name="two_level_decay")

    @staticmethod
    def ket(sign: int) -> np.ndarray:
        return KET_PLUS if sign > 0 else KET_MINUS

    def exact_ket(self, sign: int, g: float, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Numerically evolved |+-(g, t)> and its g-derivative."""
        return evolve_ket(self.hamiltonian(), self.ket(sign), g, t)

    def first_order_ket(self, sign: int, g: float, t: float) -> np.ndarray:
        """e^{-Gamma_+- t}|+-> + i g d(t)|-+>."""
        return np.exp(-self.rate(sign) * t) * self.ket(sign) + 1j * g * self.d(t) * self.ket(-sign)


def closed_form_j_single(model: TwoLevelDecayModel, t: float) -> float:
    """J_+-(t) = 4 d(t)^2."""
    if t < 0:
        raise LocalFisherError(f"evaluation time must be non-negative, got {t}")
    return 4.0 * model.d(t) ** 2


def maximize_over_time(
    func: Callable[[float], float],
    t_lo: float,
    t_hi: float,
    points: int = 200,
) -> Tuple[float, float]:
    """
    Maximize func on [t_lo, t_hi]: log-grid bracketing, then golden-section search.

    Returns:
        (argmax, max)
    """
    grid = np.geomspace(t_lo, t_hi, points)
    values = np.array([func(t) for t in grid])
    i = int(np.argmax(values))
    if i == 0 or i == points - 1:
        logger.warning(f"maximum at the edge of [{t_lo}, {t_hi}]; returning the grid point")
        return float(grid[i]), float(values[i])
    result = minimize_scalar(
        lambda t: -func(t),
        bracket=(grid[i - 1], grid[i], grid[i + 1]),
        method="golden",
        tol=1e-12,
    )
    return float(result.x), float(-result.fun)


@dataclass(frozen=True)
class OptimalTime:
    t_star: float
    j_max: float
    t_numeric: float  # golden-section maximizer of 4 d(t)^2
    j_numeric: float


def optimal_time(model: TwoLevelDecayModel) -> OptimalTime:
    """Closed-form maximizer of 4 d(t)^2, cross-checked numerically."""
    gp, gm = model.gamma_plus, model.gamma_minus
    t_star = (np.log(gp) - np.log(gm)) / (gp - gm)
    j_max = 4.0 / (gp - gm) ** 2 * (
        (gm / gp) ** (gp / (gp - gm)) - (gp / gm) ** (gm / (gm - gp))
    ) ** 2
    t_num, j_num = maximize_over_time(
        lambda t: closed_form_j_single(model, t),
        1e-3 / max(gp, gm),
        20.0 / min(gp, gm),
    )
    return OptimalTime(float(t_star), float(j_max), t_num, j_num)


class CompositeClosedForm(Enum):
    """Leading-order N = 2 results of the two-level model."""
    IID_LOCAL = "iid_j2"  # |++>, one global blank
    IID_BLOCKS = "iid_J2"  # |++>, per-subsystem blanks
    ENTANGLED_LOCAL = "ent_j2"
    ENTANGLED_BLOCKS = "ent_J2"


def closed_form_iid_blocks(model: TwoLevelDecayModel, t: float) -> Dict[Subsequence, float]:
    d2 = model.d(t) ** 2
    a2 = np.exp(-2.0 * model.gamma_plus * t)
    one_blank = 4.0 * d2 * (1.0 - a2)
    return {(): 8.0 * d2 * a2, (1,): one_blank, (2,): one_blank, (1, 2): 0.0}


def closed_form_ent_blocks(model: TwoLevelDecayModel, t: float) -> Dict[Subsequence, float]:
    d2 = model.d(t) ** 2
    a = np.exp(-model.gamma_plus * t)
    b = np.exp(-model.gamma_minus * t)
    denominator = a * a * (1.0 - b * b) + b * b * (1.0 - a * a)
    one_blank = 0.0
    if denominator > 0:
        one_blank = 2.0 * d2 * (1.0 + 2.0 * a * b) ** 2 * (a - b) ** 2 / denominator
    return {(): 8.0 * d2 * (a * a + b * b), (1,): one_blank, (2,): one_blank, (1, 2): 0.0}


def closed_form_composite(model: TwoLevelDecayModel, t: float, which: CompositeClosedForm) -> float:
    which = CompositeClosedForm(which)
    if t < 0:
        raise LocalFisherError(f"evaluation time must be non-negative, got {t}")
    if which in (CompositeClosedForm.IID_LOCAL, CompositeClosedForm.IID_BLOCKS):
        blocks = closed_form_iid_blocks(model, t)
    else:
        blocks = closed_form_ent_blocks(model, t)
    if which in (CompositeClosedForm.IID_LOCAL, CompositeClosedForm.ENTANGLED_LOCAL):
        return float(blocks[()])
    return float(sum(blocks.values()))


@dataclass(frozen=True)
class LeakyLevelModel:
    """
    Three levels with H(g) = omega(|0><1| + h.c.) + (kappa + g)(|1><2| + h.c.).

    M = span{|0>, |1>} and the initial state is |1>. The total Hamiltonian is
    Hermitian, so at early times the blank term grows as 4 t^2 whatever kappa is.
    """
    omega: float = 1.0
    kappa: float = 1.0

    EARLY_BLANK_PREFACTOR = 4.0

    def hamiltonian(self) -> HamiltonianFamily:
        C0 = np.zeros((3, 3), dtype=complex)
        C0[0, 1] = C0[1, 0] = self.omega
        C0[1, 2] = C0[2, 1] = self.kappa
        C1 = np.zeros((3, 3), dtype=complex)
        C1[1, 2] = C1[2, 1] = 1.0
        return HamiltonianFamily.from_polynomial([C0, C1], hermitian=True, name="leaky_qutrit")

    @staticmethod
    def projector() -> SubspaceProjector:
        return SubspaceProjector.from_indices(3, [0, 1])

    def local_dynamics(self) -> LocalDynamics:
        return LocalDynamics.from_full_hamiltonian(self.hamiltonian(), self.projector(), name="leaky_qutrit")

    @staticmethod
    def initial_ket() -> np.ndarray:
        return np.array([0, 1], dtype=complex)

    def accessible_ket(self, g: float, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """P|psi(g, t)> on M and its g-derivative."""
        P = self.projector()
        psi, dpsi = evolve_ket(self.hamiltonian(), P.basis @ self.initial_ket(), g, t)
        return P.basis.conj().T @ psi, P.basis.conj().T @ dpsi


def fit_power_law(xs, ys) -> Tuple[float, float]:
    """Least-squares fit of y = c x^p on log-log axes; returns (p, c)."""
    xs, ys = np.asarray(xs, dtype=float), np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise LocalFisherError("power-law fit needs positive data")
    p, log_c = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(p), float(np.exp(log_c))


@dataclass(frozen=True)
class Preset:
    name: str
    n_subsystems: int
    initial: str  # "iid" or "entangled"
    description: str


PRESETS: Dict[str, Preset] = {
    "two_level_single": Preset("two_level_single", 1, "iid", "decaying two-level system from |+>"),
    "two_level_iid2": Preset("two_level_iid2", 2, "iid", "two decaying two-level systems from |++>"),
    "two_level_ent2": Preset("two_level_ent2", 2, "entangled", "two decaying two-level systems from (|+-> + |-+>)/sqrt(2)"),
    "leaky_qutrit": Preset("leaky_qutrit", 1, "iid", "Hermitian three-level leak out of span{|0>, |1>} from |1>"),
}


def two_level_model(spec: ModelSpec) -> TwoLevelDecayModel:
    return TwoLevelDecayModel(spec.gamma_plus, spec.gamma_minus)


def build_local_dynamics(spec: ModelSpec) -> LocalDynamics:
    """
    LocalDynamics for a validated ModelSpec.

    Raises:
        ConfigurationError: If a custom model's matrices are inconsistent
    """
    if spec.is_preset:
        if spec.name == "leaky_qutrit":
            return LeakyLevelModel(spec.omega, spec.kappa).local_dynamics()
        return two_level_model(spec).local_dynamics()

    try:
        coefficients = [decode_matrix(C) for C in spec.hamiltonian]
        H = HamiltonianFamily.from_polynomial(coefficients, hermitian=spec.hermitian, name=spec.name)
        if spec.hermitian:
            P = SubspaceProjector.from_indices(H.dim, spec.accessible)
            return LocalDynamics.from_full_hamiltonian(H, P, name=spec.name)
        return LocalDynamics.from_effective_hamiltonian(H, name=spec.name)
    except (LocalFisherError, IndexError, ValueError) as e:
        raise ConfigurationError(f"invalid custom model {spec.name!r}: {e}")


def initial_single_state(spec: ModelSpec, dim_m: int) -> np.ndarray:
    """Initial density matrix of one subsystem on M."""
    if spec.initial_state is not None:
        rho = decode_matrix(spec.initial_state)
        if rho.shape != (dim_m, dim_m):
            raise ConfigurationError(f"initial_state has shape {rho.shape}, expected {(dim_m, dim_m)}")
        return rho
    if spec.is_preset and spec.name == "leaky_qutrit":
        psi = LeakyLevelModel.initial_ket()
    else:
        psi = np.eye(dim_m, dtype=complex)[0]  # |+> for the two-level presets
    return np.outer(psi, psi.conj())


def entangled_pair_state(dim_m: int) -> np.ndarray:
    """(|01> + |10>)/sqrt(2) on M^{tensor 2}; for the two-level model (|+-> + |-+>)/sqrt(2)."""
    if dim_m < 2:
        raise DimensionMismatchError("entangled pair needs dim M >= 2")
    e0, e1 = np.eye(dim_m, dtype=complex)[:2]
    return (np.kron(e0, e1) + np.kron(e1, e0)) / np.sqrt(2.0)


def resolve_composite(spec: ModelSpec, options: CompositeOptions) -> Tuple[int, str]:
    """(N, initial) after applying the preset's defaults to unset options."""
    preset = PRESETS.get(spec.name) if spec.is_preset else None
    if preset is not None and preset.n_subsystems > 1 and options.n_subsystems == 1:
        return preset.n_subsystems, preset.initial
    return options.n_subsystems, options.initial


def build_scenario(
    spec: ModelSpec,
    options: Optional[CompositeOptions] = None,
    initial_matrix: Optional[np.ndarray] = None,
) -> CompositeScenario:
    """
    CompositeScenario for a model and composite options.

    Args:
        spec: Validated model spec
        options: N, initial state kind and derivative strategy
        initial_matrix: Explicit state on M^{tensor N} (initial == "file")
    """
    options = options or CompositeOptions()
    dynamics = build_local_dynamics(spec)
    n, initial = resolve_composite(spec, options)
    strategy = DerivativeStrategy(options.derivative)
    if strategy is DerivativeStrategy.ANALYTIC and not dynamics.analytic:
        strategy = DerivativeStrategy.FINITE_DIFFERENCE

    if initial == "file":
        if initial_matrix is None:
            raise ConfigurationError("initial='file' needs an initial state matrix")
        return CompositeScenario(n, initial_matrix, dynamics, strategy, name=spec.name)
    if initial == "entangled":
        return CompositeScenario.from_ket(entangled_pair_state(dynamics.dim_m), n, dynamics, derivative=strategy, name=spec.name)
    single = initial_single_state(spec, dynamics.dim_m)
    return CompositeScenario.iid(single, n, dynamics, derivative=strategy, name=spec.name)


def estimator_for(name: str, report=None) -> LocalEstimator:
    """
    Local estimator by name: "optimal"/"alternative" from a FisherReport,
    "sigma_y"/"sigma_x" as two-level observables with blank value 0.
    """
    if name == "sigma_y":
        return LocalEstimator(SIGMA_Y, 0.0)
    if name == "sigma_x":
        return LocalEstimator(SIGMA_X, 0.0)
    if report is None:
        raise LocalFisherError(f"estimator {name!r} needs a Fisher report")
    if name == "optimal":
        return report.optimal_estimator
    if name == "alternative":
        return report.alternative_estimator
    raise LocalFisherError(f"unknown estimator {name!r}")


if __name__ == "__main__":
    model = TwoLevelDecayModel(2.0, 1.0)
    opt = optimal_time(model)
    print(f"t* = {opt.t_star:.6f} (numeric {opt.t_numeric:.6f}), J_max = {opt.j_max:.6f}")
