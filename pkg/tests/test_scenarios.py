import numpy as np
import numpy.testing as npt
import pytest

from src.composite import DerivativeStrategy
from src.config import CompositeOptions, ModelSpec
from src.errors import ConfigurationError, LocalFisherError
from src.fisher import local_fisher, pure_state_fisher_terms
from src.scenarios import (
    PRESETS,
    CompositeClosedForm,
    LeakyLevelModel,
    TwoLevelDecayModel,
    build_local_dynamics,
    build_scenario,
    closed_form_composite,
    closed_form_ent_blocks,
    closed_form_iid_blocks,
    closed_form_j_single,
    entangled_pair_state,
    estimator_for,
    fit_power_law,
    initial_single_state,
    maximize_over_time,
    optimal_time,
)


def test_model_rejects_degenerate_rates():
    with pytest.raises(LocalFisherError):
        TwoLevelDecayModel(1.0, 1.0)
    with pytest.raises(LocalFisherError):
        TwoLevelDecayModel(-1.0, 1.0)


def test_optimal_time_closed_form(two_level):
    opt = optimal_time(two_level)
    assert opt.t_star == pytest.approx(np.log(2.0))
    assert opt.j_max == pytest.approx(0.25)
    assert opt.t_numeric == pytest.approx(opt.t_star, abs=1e-6)
    assert opt.j_numeric == pytest.approx(opt.j_max, rel=1e-10)
    assert closed_form_j_single(two_level, opt.t_star) == pytest.approx(opt.j_max)


@pytest.mark.parametrize("rates", [(3.0, 0.5), (0.2, 1.7)])
def test_optimal_time_other_rates(rates):
    model = TwoLevelDecayModel(*rates)
    opt = optimal_time(model)
    assert opt.t_numeric == pytest.approx(opt.t_star, rel=1e-5)
    assert opt.j_max == pytest.approx(4.0 * model.d(opt.t_star) ** 2, rel=1e-10)


def test_maximize_over_time_edge_warning():
    t, value = maximize_over_time(lambda t: t, 0.1, 1.0, points=10)
    assert t == pytest.approx(1.0)
    assert value == pytest.approx(1.0)


def test_single_curve_matches_numerics(two_level):
    for t in [0.1, 0.7, 2.5]:
        psi, dpsi = two_level.exact_ket(1, 1e-4, t)
        accessible, blank = pure_state_fisher_terms(psi, dpsi)
        assert accessible + blank == pytest.approx(closed_form_j_single(two_level, t), rel=1e-2)


def test_first_order_ket_is_second_order_accurate(two_level):
    residuals = [np.linalg.norm(two_level.exact_ket(1, g, 1.0)[0] - two_level.first_order_ket(1, g, 1.0)) for g in (1e-2, 1e-3)]
    assert residuals[0] / residuals[1] == pytest.approx(100.0, rel=0.05)


def test_survival_and_d(two_level):
    assert two_level.survival(0.5, 1) == pytest.approx(np.exp(-2.0))
    assert two_level.survival(0.5, -1) == pytest.approx(np.exp(-1.0))
    npt.assert_allclose(two_level.d(np.array([0.0, 1.0])), [0.0, np.exp(-2.0) - np.exp(-1.0)])


def test_closed_form_composites(two_level):
    t = 0.4
    iid = closed_form_iid_blocks(two_level, t)
    assert closed_form_composite(two_level, t, CompositeClosedForm.IID_LOCAL) == pytest.approx(iid[()])
    assert closed_form_composite(two_level, t, CompositeClosedForm.IID_BLOCKS) == pytest.approx(
        2.0 * closed_form_j_single(two_level, t)
    )
    ent = closed_form_ent_blocks(two_level, t)
    assert closed_form_composite(two_level, t, "ent_J2") == pytest.approx(sum(ent.values()))


def test_entangled_ratio_limits(two_level):
    early = closed_form_composite(two_level, 1e-3, CompositeClosedForm.ENTANGLED_BLOCKS) / closed_form_j_single(two_level, 1e-3)
    late = closed_form_composite(two_level, 10.0, CompositeClosedForm.ENTANGLED_BLOCKS) / closed_form_j_single(two_level, 10.0)
    assert early == pytest.approx(4.0, rel=0.01)
    assert late == pytest.approx(1.0, rel=0.05)


def test_leaky_early_blank_term():
    leaky = LeakyLevelModel()
    ts = np.geomspace(1e-4, 1e-2, 5)
    blanks = []
    for t in ts:
        psi, dpsi = leaky.accessible_ket(1e-4, t)
        rho = np.outer(psi, psi.conj())
        drho = np.outer(dpsi, psi.conj()) + np.outer(psi, dpsi.conj())
        blanks.append(local_fisher(rho, drho).blank_term)
    exponent, prefactor = fit_power_law(ts, blanks)
    assert exponent == pytest.approx(2.0, abs=0.05)
    assert prefactor == pytest.approx(LeakyLevelModel.EARLY_BLANK_PREFACTOR, rel=0.05)


def test_fit_power_law():
    xs = np.array([1.0, 2.0, 4.0])
    p, c = fit_power_law(xs, 3.0 * xs ** 1.5)
    assert p == pytest.approx(1.5)
    assert c == pytest.approx(3.0)
    with pytest.raises(LocalFisherError):
        fit_power_law([1.0, 2.0], [1.0, 0.0])


def test_entangled_pair_state_is_normalized():
    psi = entangled_pair_state(2)
    assert np.vdot(psi, psi).real == pytest.approx(1.0)
    npt.assert_allclose(psi, np.array([0, 1, 1, 0]) / np.sqrt(2))


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_every_preset_builds(name):
    spec = ModelSpec(name=name)
    scenario = build_scenario(spec)
    assert scenario.n_subsystems == PRESETS[name].n_subsystems
    assert scenario.derivative is DerivativeStrategy.ANALYTIC


def test_custom_effective_model_builds():
    spec = ModelSpec(
        name="custom_decay",
        hamiltonian=[[[[0, -1.5], 0], [0, [0, -0.5]]], [[0, 1], [1, 0]]],
    )
    dynamics = build_local_dynamics(spec)
    assert dynamics.dim_m == 2
    rho = initial_single_state(spec, 2)
    npt.assert_allclose(rho, np.diag([1.0, 0.0]))


def test_custom_hermitian_model():
    spec = ModelSpec(
        name="custom_leak",
        hamiltonian=[np.zeros((3, 3)).tolist(), [[0, 0, 0], [0, 0, 1], [0, 1, 0]]],
        hermitian=True,
        accessible=[0, 1],
        initial_state=[[0, 0], [0, 1]],
    )
    scenario = build_scenario(spec, CompositeOptions(n_subsystems=2))
    assert scenario.dim_m == 2
    assert scenario.dynamics.full_space is not None


def test_custom_model_with_inconsistent_matrices():
    spec = ModelSpec(name="broken", hamiltonian=[[[1, 0], [0, 1]], [[1, 0, 0], [0, 1, 0], [0, 0, 1]]])
    with pytest.raises(ConfigurationError):
        build_local_dynamics(spec)


def test_initial_state_shape_checked():
    spec = ModelSpec(initial_state=[[1.0]])
    with pytest.raises(ConfigurationError):
        initial_single_state(spec, 2)


def test_estimators_by_name(two_level):
    family = two_level.local_dynamics().accessible_family(np.diag([1.0, 0.0]).astype(complex), 0.5)
    report = local_fisher(*family.at(1e-3))
    assert estimator_for("optimal", report) is report.optimal_estimator
    assert estimator_for("alternative", report) is report.alternative_estimator
    assert estimator_for("sigma_y").blank_value == 0.0
    with pytest.raises(LocalFisherError):
        estimator_for("optimal")
    with pytest.raises(LocalFisherError):
        estimator_for("sigma_w", report)


def test_slow_minus_decay_optimal_time():
    model = TwoLevelDecayModel(1.0, 0.01)
    opt = optimal_time(model)
    assert opt.t_star == pytest.approx(-np.log(0.01), rel=0.05)
    assert opt.t_numeric == pytest.approx(opt.t_star, rel=1e-4)
    assert 0.5 * 0.01 ** 2 <= model.survival(opt.t_star) <= 2.0 * 0.01 ** 2
    # ten times slower decay of |-> pushes t* out by about ln 10
    slower = optimal_time(TwoLevelDecayModel(1.0, 0.001)).t_star
    assert slower - opt.t_star == pytest.approx(np.log(10.0), rel=0.05)
