"""
Monte Carlo - Simulated projective measurements of local estimators.

This module handles:
1. Born-rule outcome distributions of an estimator on a blank-extended state
2. Reproducible sampling (PCG64, SeedSequence stream splitting per batch)
3. Calibrated point estimates and per-run statistics
4. Empirical checks of the Cramer-Rao bound and of N-sample averaging
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import worker_count
from .dynamics import ParametrizedFamily
from .errors import InvalidStateError
from .fisher import LinearCalibration, LocalEstimator, calibrate_linear, local_fisher
from .operator_core import merged_spectrum
from .states import BlankExtendedState, DensityOperator, TraceClass

logger = logging.getLogger(__name__)

RNG_ALGORITHM = "PCG64"
PROBABILITY_SUM_TOL = 1e-9
NEGATIVE_PROBABILITY_TOL = 1e-12
DEGENERACY_RTOL = 1e-10

CSV_COLUMNS = ["seed", "n_shots", "mean", "variance", "g_hat", "delta_g_sq"]


def _generator(seed_sequence: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence))


@dataclass(frozen=True)
class MeasurementModel:
    """Outcome distribution of measuring a local estimator (or its N-sample mean)."""
    estimator: LocalEstimator
    state: BlankExtendedState
    outcomes: np.ndarray = field(repr=False)  # merged eigenvalues, descending
    probabilities: np.ndarray = field(repr=False)
    n_average: int = 1

    @classmethod
    def build(cls, state: BlankExtendedState, estimator: LocalEstimator) -> "MeasurementModel":
        """
        Spectral decomposition of the estimator and Born probabilities Tr[rho Pi_k].

        Raises:
            InvalidStateError: If a probability is below -1e-12 or they do not sum to 1
        """
        outcomes, projectors = merged_spectrum(estimator.matrix(), DEGENERACY_RTOL)
        rho = state.matrix()
        p = np.array([float(np.trace(Pk @ rho).real) for Pk in projectors])
        if p.min() < -NEGATIVE_PROBABILITY_TOL:
            raise InvalidStateError(f"negative outcome probability {p.min():.3e}")
        p = np.clip(p, 0.0, None)
        total = float(p.sum())
        if abs(total - 1.0) > PROBABILITY_SUM_TOL:
            raise InvalidStateError(f"outcome probabilities sum to {total:.12g}")
        logger.debug(f"measurement model: {len(outcomes)} outcomes, p = {np.round(p, 6).tolist()}")
        return cls(estimator, state, outcomes, p / total)

    @classmethod
    def from_family(cls, family: ParametrizedFamily, estimator: LocalEstimator, g: float) -> "MeasurementModel":
        rho, _ = family.at(g)
        accessible = DensityOperator(rho, TraceClass.SUBNORMALIZED)
        return cls.build(BlankExtendedState(accessible, max(0.0, 1.0 - accessible.trace)), estimator)

    def averaged(self, n: int) -> "MeasurementModel":
        """Model of the N-sample mean A^(N) = (1/N) sum_k A_k on rho^{tensor N}."""
        if n < 1:
            raise ValueError(f"number of averaged samples must be positive, got {n}")
        return replace(self, n_average=n)

    @property
    def mean(self) -> float:
        return float(self.probabilities @ self.outcomes)

    @property
    def variance(self) -> float:
        """Variance of one outcome of the (possibly averaged) estimator."""
        single = float(self.probabilities @ self.outcomes ** 2) - self.mean ** 2
        return max(single, 0.0) / self.n_average


def sample_outcomes(
    model: MeasurementModel,
    n_shots: int,
    seed: int,
    batch_size: int = 1_000_000,
) -> np.ndarray:
    """
    Draw n_shots i.i.d. outcomes of the model.

    Shots are split into batches, each with its own child stream of
    SeedSequence(seed); batches run on a thread pool and are concatenated in
    batch order, so the result depends only on (seed, n_shots, batch_size).
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be positive, got {n_shots}")
    n_batches = math.ceil(n_shots / batch_size)
    sizes = [min(batch_size, n_shots - k * batch_size) for k in range(n_batches)]
    streams = np.random.SeedSequence(seed).spawn(n_batches)

    def draw(args) -> np.ndarray:
        size, stream = args
        rng = _generator(stream)
        idx = rng.choice(len(model.outcomes), size=(size, model.n_average), p=model.probabilities)
        return model.outcomes[idx].mean(axis=1)

    work = list(zip(sizes, streams))
    if n_batches > 1:
        with ThreadPoolExecutor(max_workers=min(worker_count(), n_batches)) as pool:
            batches = list(pool.map(draw, work))
    else:
        batches = [draw(work[0])]
    return np.concatenate(batches)


@dataclass
class RunStatistics:
    """Statistics of one simulated run."""
    n_shots: int
    sample_mean: float
    sample_variance: float  # n - 1 denominator
    g_hat: float
    empirical_mse: float  # (g_hat - reference g)^2
    rng_seed: int
    delta_g_sq: float  # sample_variance / slope^2
    rng_algorithm: str = RNG_ALGORITHM

    def csv_row(self) -> Dict[str, float]:
        return {
            "seed": self.rng_seed,
            "n_shots": self.n_shots,
            "mean": self.sample_mean,
            "variance": self.sample_variance,
            "g_hat": self.g_hat,
            "delta_g_sq": self.delta_g_sq,
        }


def estimate_from_shots(
    outcomes: np.ndarray,
    calibration: LinearCalibration,
    seed: int = 0,
    reference_g: Optional[float] = None,
) -> Tuple[float, RunStatistics]:
    """g_hat = f(sample mean) together with the run statistics."""
    outcomes = np.asarray(outcomes, dtype=float)
    n = outcomes.size
    mean = float(outcomes.mean())
    variance = float(outcomes.var(ddof=1)) if n > 1 else 0.0
    g_hat = calibration(mean)
    reference = calibration.g0 if reference_g is None else reference_g
    stats = RunStatistics(
        n_shots=n,
        sample_mean=mean,
        sample_variance=variance,
        g_hat=g_hat,
        empirical_mse=(g_hat - reference) ** 2,
        rng_seed=int(seed),
        delta_g_sq=variance / calibration.slope ** 2,
    )
    return g_hat, stats


@dataclass
class CramerRaoCheck:
    """Empirical delta g^2 over repeated runs against the bound 1/J."""
    runs: List[RunStatistics] = field(repr=False)
    fisher_information: float
    slope: float
    n_average: int
    mean_delta_g_sq: float
    standard_error: float
    spread_delta_g_sq: float  # n_shots * Var(g_hat) across repeats
    model_variance: float  # exact variance of one (averaged) outcome

    @property
    def bound(self) -> float:
        return 1.0 / self.fisher_information

    @property
    def ratio(self) -> float:
        return self.mean_delta_g_sq / self.bound

    @property
    def ratio_se(self) -> float:
        return self.standard_error / self.bound

    def respects_bound(self, n_sigma: float = 5.0) -> bool:
        """No statistically significant undercut of 1/J (scaled by the averaging)."""
        floor = self.bound / self.n_average
        return self.mean_delta_g_sq >= floor * (1.0 - n_sigma * self.standard_error / self.mean_delta_g_sq)

    def csv_rows(self) -> List[Dict[str, float]]:
        return [r.csv_row() for r in self.runs]

    def to_dict(self) -> Dict:
        return {
            "fisher_information": self.fisher_information,
            "bound": self.bound,
            "slope": self.slope,
            "n_average": self.n_average,
            "mean_delta_g_sq": self.mean_delta_g_sq,
            "standard_error": self.standard_error,
            "ratio": self.ratio,
            "ratio_se": self.ratio_se,
            "spread_delta_g_sq": self.spread_delta_g_sq,
            "model_variance": self.model_variance,
            "rng_algorithm": RNG_ALGORITHM,
            "runs": [asdict(r) for r in self.runs],
        }


def repeat_seeds(seed: int, n_repeats: int) -> List[int]:
    """One integer seed per repeat, split from SeedSequence(seed)."""
    return [int(child.generate_state(1)[0]) for child in np.random.SeedSequence(seed).spawn(n_repeats)]


def empirical_cr_check(
    family: ParametrizedFamily,
    estimator: LocalEstimator,
    g: float,
    n_shots: int,
    n_repeats: int,
    seed: int = 0,
    n_average: int = 1,
    fisher_information: Optional[float] = None,
    batch_size: int = 1_000_000,
) -> CramerRaoCheck:
    """
    Simulate n_repeats runs of n_shots measurements and compare delta g^2 with 1/J.

    Each run's delta g^2 is its within-run sample variance over slope^2; the
    report averages them over repeats and gives the standard error of that mean.

    Args:
        family: Accessible family g -> rho_par(g)
        estimator: Local estimator to measure
        g: True parameter value
        n_shots: Shots per run
        n_repeats: Independent runs
        seed: Master seed, split per repeat
        n_average: Measure the mean of this many i.i.d. copies per shot
        fisher_information: Override the local Fisher information (default: computed)
    """
    if fisher_information is None:
        rho, drho = family.at(g)
        fisher_information = local_fisher(rho, drho).value
    calibration = calibrate_linear(family, estimator, g)
    model = MeasurementModel.from_family(family, estimator, g).averaged(n_average)

    runs: List[RunStatistics] = []
    for k, run_seed in enumerate(repeat_seeds(seed, n_repeats)):
        outcomes = sample_outcomes(model, n_shots, run_seed, batch_size)
        _, stats = estimate_from_shots(outcomes, calibration, seed=run_seed, reference_g=g)
        runs.append(stats)
        logger.info(f"repeat {k + 1}/{n_repeats}: g_hat = {stats.g_hat:.6g}, dg^2 = {stats.delta_g_sq:.6g}")

    dg2 = np.array([r.delta_g_sq for r in runs])
    g_hats = np.array([r.g_hat for r in runs])
    se = float(dg2.std(ddof=1) / np.sqrt(n_repeats)) if n_repeats > 1 else 0.0
    spread = float(n_shots * g_hats.var(ddof=1)) if n_repeats > 1 else float("nan")
    return CramerRaoCheck(
        runs=runs,
        fisher_information=float(fisher_information),
        slope=calibration.slope,
        n_average=n_average,
        mean_delta_g_sq=float(dg2.mean()),
        standard_error=se,
        spread_delta_g_sq=spread,
        model_variance=model.variance,
    )


def averaging_scaling(
    model: MeasurementModel,
    sizes: Sequence[int],
    n_shots: int,
    seed: int = 0,
) -> Dict[int, float]:
    """
    N * (sample variance of the N-sample mean) / V for each N.

    Values near 1 confirm V[A^(N)] = V[A] / N.
    """
    base = model.averaged(1).variance
    ratios: Dict[int, float] = {}
    for n, run_seed in zip(sizes, repeat_seeds(seed, len(sizes))):
        outcomes = sample_outcomes(model.averaged(n), n_shots, run_seed)
        ratios[n] = float(n * outcomes.var(ddof=1) / base)
    return ratios


def standard_error_scaling(
    model: MeasurementModel,
    shot_counts: Sequence[int],
    n_repeats: int,
    seed: int = 0,
) -> float:
    """Log-log slope of the spread of sample means against n; about -0.5."""
    spreads = []
    for n, n_seed in zip(shot_counts, repeat_seeds(seed, len(shot_counts))):
        means = [sample_outcomes(model, n, s).mean() for s in repeat_seeds(n_seed, n_repeats)]
        spreads.append(float(np.std(means, ddof=1)))
    slope, _ = np.polyfit(np.log(shot_counts), np.log(spreads), 1)
    return float(slope)
