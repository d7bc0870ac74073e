import numpy as np
import numpy.testing as npt
import pytest

from src.dynamics import ParametrizedFamily
from src.errors import (
    DimensionMismatchError,
    InconsistentDerivativeError,
    InsensitiveEstimatorError,
    InvalidStateError,
    NotAvailableObservableError,
    OutsideTimeDomainError,
)
from src.fisher import (
    FisherFlag,
    LocalEstimator,
    calibrate_linear,
    estimator_moments,
    expected_error,
    extended_derivative,
    extended_state,
    fisher_info,
    local_fisher,
    local_fisher_from_sld,
    measurement_fisher,
    nsample_sld,
    pure_state_fisher,
    pure_state_fisher_terms,
)
from src.operator_core import hermitian_eig, psd_sqrt, solve_sld, tensor
from src.random_ops import random_density_matrix, random_hermitian
from src.scenarios import SIGMA_X, SIGMA_Y, closed_form_j_single
from src.states import SubspaceProjector

SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


def _pure(psi, dpsi):
    return np.outer(psi, psi.conj()), np.outer(dpsi, psi.conj()) + np.outer(psi, dpsi.conj())


@pytest.fixture
def decay_family(two_level):
    return two_level.local_dynamics().accessible_family(np.diag([1.0, 0.0]).astype(complex), 0.5)


def test_fisher_info_of_mixed_qubit():
    report = fisher_info(np.eye(2) / 2, SIGMA_Z / 2)
    assert report.value == pytest.approx(1.0)
    assert report.blank_term == 0.0
    npt.assert_allclose(report.sld, SIGMA_Z, atol=1e-12)


def test_fisher_info_rejects_subnormalized_state():
    with pytest.raises(InvalidStateError):
        fisher_info(np.eye(2) / 4, SIGMA_Z / 2)
    with pytest.raises(InconsistentDerivativeError):
        fisher_info(np.eye(2) / 2, np.eye(2) / 2)


def test_local_fisher_reduces_to_fisher_info_at_unit_trace():
    report = local_fisher(np.eye(2) / 2, SIGMA_Z / 2)
    assert report.value == pytest.approx(1.0)
    assert report.blank_term == 0.0
    assert FisherFlag.BLANK_TERM_DROPPED in report.flags


def test_local_fisher_guarded_blank_term_raises():
    with pytest.raises(InconsistentDerivativeError):
        local_fisher(np.eye(2) / 2, np.eye(2) / 2)


def test_local_fisher_rejects_empty_accessible_state():
    with pytest.raises(InvalidStateError):
        local_fisher(np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(OutsideTimeDomainError):
        local_fisher(np.diag([1e-14, 0.0]), np.zeros((2, 2)))


def test_single_system_matches_closed_form(two_level):
    psi, dpsi = two_level.exact_ket(1, 1e-4, 0.5)
    report = local_fisher(*_pure(psi, dpsi))
    assert report.value == pytest.approx(closed_form_j_single(two_level, 0.5), rel=1e-2)
    assert report.accessible_term + report.blank_term == pytest.approx(report.value)
    assert report.accessible_trace == pytest.approx(np.vdot(psi, psi).real)


def test_pure_state_formula_matches_sld(two_level):
    psi, dpsi = two_level.exact_ket(-1, 0.05, 1.2)
    accessible, blank = pure_state_fisher_terms(psi, dpsi)
    report = local_fisher(*_pure(psi, dpsi))
    assert pure_state_fisher(psi, dpsi) == pytest.approx(report.value, rel=1e-9)
    assert blank == pytest.approx(report.blank_term, rel=1e-8, abs=1e-14)
    assert accessible == pytest.approx(report.accessible_term, rel=1e-8)


def test_pure_state_formula_rejects_bad_vectors():
    with pytest.raises(InvalidStateError):
        pure_state_fisher([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(InvalidStateError):
        pure_state_fisher([1.0, 1.0], [1.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        pure_state_fisher([1.0, 0.0], [1.0, 0.0, 0.0])


@pytest.mark.parametrize("which", ["optimal", "alternative"])
def test_optimal_estimators_attain_bound(decay_family, which):
    rho, drho = decay_family.at(0.01)
    report = local_fisher(rho, drho)
    estimator = report.optimal_estimator if which == "optimal" else report.alternative_estimator
    assert expected_error(decay_family, estimator, 0.01) ** 2 * report.value == pytest.approx(1.0, rel=1e-7)


def test_optimal_estimator_is_locally_unbiased_around_zero(decay_family):
    rho, drho = decay_family.at(0.01)
    report = local_fisher(rho, drho)
    moments = estimator_moments(decay_family, report.optimal_estimator, 0.01)
    assert moments.mean == pytest.approx(0.0, abs=1e-10)
    assert moments.slope == pytest.approx(report.value, rel=1e-9)


def test_random_estimators_respect_bound(decay_family, rng):
    rho, drho = decay_family.at(0.01)
    bound = 1.0 / local_fisher(rho, drho).value
    for _ in range(20):
        estimator = LocalEstimator(random_hermitian(2, rng), rng.normal())
        assert expected_error(decay_family, estimator, 0.01) ** 2 >= bound - 1e-12


def test_insensitive_estimator(decay_family):
    with pytest.raises(InsensitiveEstimatorError):
        estimator_moments(decay_family, LocalEstimator.identity(2), 0.01)


def test_linear_calibration_is_unbiased_at_g0(decay_family):
    estimator = LocalEstimator(SIGMA_Y, 0.0)
    calibration = calibrate_linear(decay_family, estimator, 0.01)
    moments = estimator_moments(decay_family, estimator, 0.01)
    assert calibration(moments.mean) == pytest.approx(0.01)
    npt.assert_allclose(calibration(np.array([moments.mean, moments.mean + moments.slope])), [0.01, 1.01])


def test_measurement_fisher_below_local_fisher(decay_family):
    rho, drho = decay_family.at(0.01)
    report = local_fisher(rho, drho)
    assert measurement_fisher(rho, drho, LocalEstimator(SIGMA_Y, 0.0)) <= report.value + 1e-10
    assert measurement_fisher(rho, drho, report.optimal_estimator) <= report.value + 1e-10


def test_extended_family_is_normalized(decay_family):
    rho, drho = decay_family.at(0.01)
    assert np.trace(extended_state(rho)).real == pytest.approx(1.0)
    assert np.trace(extended_derivative(drho)).real == pytest.approx(0.0, abs=1e-14)
    # the blank-extended family's ordinary Fisher information is the local one
    assert fisher_info(extended_state(rho), extended_derivative(drho)).value == pytest.approx(
        local_fisher(rho, drho).value, rel=1e-9
    )


def test_sld_gauge_freedom_on_kernel(rng):
    rho = 0.7 * random_density_matrix(4, rng, rank=2)
    X = random_hermitian(4, rng)
    drho = X @ rho + rho @ X
    L = solve_sld(rho, drho)
    _, V = hermitian_eig(rho)
    kernel = V[:, 2:]
    L2 = L + kernel @ random_hermitian(2, rng) @ kernel.conj().T
    assert local_fisher_from_sld(rho, L2) == pytest.approx(local_fisher_from_sld(rho, L), abs=1e-9)
    assert local_fisher_from_sld(rho, L) == pytest.approx(local_fisher(rho, drho).value, rel=1e-10)


def test_nsample_sld_adds_information():
    rho, drho = np.eye(2) / 2, SIGMA_Z / 2
    rho2 = tensor(rho, rho)
    drho2 = tensor(drho, rho) + tensor(rho, drho)
    L2 = nsample_sld(SIGMA_Z, 2)
    npt.assert_allclose(L2, solve_sld(rho2, drho2), atol=1e-12)
    assert fisher_info(rho2, drho2).value == pytest.approx(2.0)
    with pytest.raises(DimensionMismatchError):
        nsample_sld(SIGMA_Z, 0)


def test_estimator_from_available_observable(rng):
    P = SubspaceProjector.from_indices(3, [0, 1])
    A_par = random_hermitian(2, rng)
    estimator = LocalEstimator(A_par, -0.4)
    restored = LocalEstimator.from_available(estimator.available_operator(P), P)
    npt.assert_allclose(restored.accessible_block, A_par, atol=1e-12)
    assert restored.blank_value == pytest.approx(-0.4)
    with pytest.raises(NotAvailableObservableError):
        LocalEstimator.from_available(np.ones((3, 3)), P)
    with pytest.raises(DimensionMismatchError):
        LocalEstimator.from_available(np.eye(2), P)


def test_family_without_derivative_uses_finite_differences():
    family = ParametrizedFamily(lambda g: np.diag([0.5 + 0.1 * g, 0.3]).astype(complex))
    _, drho = family.at(0.2)
    npt.assert_allclose(drho, np.diag([0.1, 0.0]), atol=1e-9)


def test_cauchy_schwarz_chain(rng):
    for _ in range(20):
        rho = random_density_matrix(3, rng)
        H = random_hermitian(3, rng)
        drho = H @ rho + rho @ H - 2.0 * np.trace(H @ rho).real * rho
        L = solve_sld(rho, drho)
        A = random_hermitian(3, rng)
        mean = np.trace(A @ rho).real
        root = psd_sqrt(rho)
        X = L @ root
        Y = (A - mean * np.eye(3)) @ root
        cross = np.trace(X.conj().T @ Y + Y.conj().T @ X)
        assert cross.real == pytest.approx(2.0 * np.trace(A @ drho).real, abs=1e-10)
        lhs = np.trace(X.conj().T @ X).real * np.trace(Y.conj().T @ Y).real
        assert lhs >= 0.25 * abs(cross) ** 2 - 1e-12


def test_sigma_x_estimator_is_far_from_the_bound(decay_family):
    report = local_fisher(*decay_family.at(0.01))
    with pytest.raises(InsensitiveEstimatorError):
        expected_error(decay_family, LocalEstimator(SIGMA_X, 0.0), 0.01)
    # only the blank outcome carries signal, at second order in g
    error = expected_error(decay_family, LocalEstimator(SIGMA_X, 1.0), 0.01)
    assert error ** 2 * report.value > 100.0
    assert expected_error(decay_family, LocalEstimator(SIGMA_Y, 0.0), 0.01) < error


def test_linear_calibration_on_affine_family():
    family = ParametrizedFamily(
        state=lambda g: np.diag([g, 1.0 - g]).astype(complex),
        derivative=lambda g: np.diag([1.0, -1.0]).astype(complex),
    )
    estimator = LocalEstimator(np.diag([3.0, 1.0]).astype(complex), 0.0)
    calibration = calibrate_linear(family, estimator, 0.3)
    assert calibration.slope == pytest.approx(2.0)
    assert calibration.offset == pytest.approx(1.6)
    npt.assert_allclose(calibration(np.array([1.0, 1.6, 3.0])), [0.0, 0.3, 1.0])
