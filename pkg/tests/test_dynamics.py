import numpy as np
import numpy.testing as npt
import pytest

from src.dynamics import (
    HamiltonianFamily,
    LindbladGenerator,
    LocalDynamics,
    apply_slotwise,
    central_difference,
    channel_from_lindblad,
    channel_from_unitary,
    channel_tensor_apply,
    channel_tensor_derivative,
    dilate_contraction,
    evolve_ket,
    evolve_nonhermitian,
    propagator,
)
from src.errors import LocalFisherError, NonDissipativeError, NonHermitianError, OutsideTimeDomainError
from src.operator_core import dagger, tensor
from src.random_ops import random_density_matrix, random_hermitian
from src.scenarios import LeakyLevelModel
from src.states import DensityOperator, SubspaceProjector

RHO_PLUS = np.diag([1.0, 0.0]).astype(complex)


def test_central_difference_richardson():
    assert central_difference(np.sin, 0.3) == pytest.approx(np.cos(0.3), abs=1e-8)
    blocks = central_difference(lambda g: {"a": np.array([g ** 3])}, 1.0, h=1e-3)
    assert blocks["a"][0] == pytest.approx(3.0, abs=1e-9)


def test_polynomial_hamiltonian_derivative():
    C0, C1, C2 = (np.diag([float(k), -float(k)]) for k in (1, 2, 3))
    H = HamiltonianFamily.from_polynomial([C0, C1, C2])
    npt.assert_allclose(H.matrix(0.5), C0 + 0.5 * C1 + 0.25 * C2)
    npt.assert_allclose(H.derivative(0.5), C1 + 2 * 0.5 * C2)


def test_hermitian_family_rejects_non_hermitian_matrix():
    H = HamiltonianFamily.from_polynomial([np.array([[0, 1], [0, 0]])], hermitian=True)
    with pytest.raises(NonHermitianError):
        H.matrix(0.0)


def test_interval_is_enforced():
    H = HamiltonianFamily.from_polynomial([np.eye(2)], interval=(0.0, 1.0))
    with pytest.raises(LocalFisherError):
        H.matrix(2.0)


def test_evolve_ket_derivative_matches_finite_difference(two_level):
    H = two_level.hamiltonian()
    psi, dpsi = evolve_ket(H, [1.0, 0.0], 0.2, 0.7)
    fd = central_difference(lambda g: evolve_ket(H, [1.0, 0.0], g, 0.7)[0], 0.2)
    npt.assert_allclose(dpsi, fd, atol=1e-9)


def test_nonhermitian_evolution_decays(two_level):
    rho = evolve_nonhermitian(two_level.hamiltonian(), DensityOperator(RHO_PLUS), 0.0, 0.5)
    assert rho.trace == pytest.approx(np.exp(-2 * 2.0 * 0.5))


def test_nonhermitian_evolution_rejects_gain():
    H = HamiltonianFamily.from_polynomial([1j * np.eye(2)], hermitian=False)
    with pytest.raises(NonDissipativeError):
        evolve_nonhermitian(H, DensityOperator(RHO_PLUS), 0.0, 1.0)


def test_nonhermitian_evolution_outside_time_domain(two_level):
    with pytest.raises(OutsideTimeDomainError):
        evolve_nonhermitian(two_level.hamiltonian(), DensityOperator(RHO_PLUS), 0.0, 20.0)


def test_negative_time_rejected(two_level):
    with pytest.raises(LocalFisherError):
        propagator(two_level.hamiltonian(), 0.0, -1.0)


def test_channel_matches_direct_evolution(two_level, rng):
    rho0 = random_density_matrix(2, rng)
    K = propagator(two_level.hamiltonian(), 0.3, 0.8)
    ch = two_level.local_dynamics().channel(0.3, 0.8)
    npt.assert_allclose(ch.apply(rho0), K @ rho0 @ dagger(K), atol=1e-12)
    assert ch.is_completely_positive()
    assert np.trace(ch.apply(rho0)).real <= 1.0


def test_channel_derivative_matches_finite_difference(two_level, rng):
    rho0 = random_density_matrix(2, rng)
    dynamics = two_level.local_dynamics()
    analytic = dynamics.channel(0.1, 0.6).apply_derivative(rho0)
    fd = central_difference(lambda g: dynamics.channel(g, 0.6).apply(rho0), 0.1)
    npt.assert_allclose(analytic, fd, atol=1e-8)


def test_lindblad_channel_is_trace_preserving(rng):
    H = random_hermitian(3, rng)
    jump = np.zeros((3, 3), dtype=complex)
    jump[0, 2] = 1.0
    ch = channel_from_lindblad(LindbladGenerator.from_operators(H, [jump], [0.5]), 1.3)
    rho0 = random_density_matrix(3, rng)
    assert np.trace(ch.apply(rho0)).real == pytest.approx(1.0, abs=1e-12)
    assert ch.is_completely_positive()


def test_compose_adds_times(two_level):
    dynamics = two_level.local_dynamics()
    composed = dynamics.channel(0.2, 0.3).compose(dynamics.channel(0.2, 0.4))
    npt.assert_allclose(composed.superop, dynamics.channel(0.2, 0.7).superop, atol=1e-12)
    assert composed.t == pytest.approx(0.7)


def test_slotwise_application_of_products(two_level, rng):
    ch = two_level.local_dynamics().channel(0.2, 0.5)
    A, B = random_density_matrix(2, rng), random_density_matrix(2, rng)
    npt.assert_allclose(channel_tensor_apply(ch, 2, tensor(A, B)), tensor(ch.apply(A), ch.apply(B)), atol=1e-12)
    npt.assert_allclose(apply_slotwise([None, ch.superop], tensor(A, B), 2), tensor(A, ch.apply(B)), atol=1e-12)


def test_tensor_derivative_matches_finite_difference(two_level, rng):
    dynamics = two_level.local_dynamics()
    X = random_density_matrix(8, rng)
    analytic = channel_tensor_derivative(dynamics.channel(0.1, 0.4), 3, X)
    fd = central_difference(lambda g: channel_tensor_apply(dynamics.channel(g, 0.4), 3, X), 0.1)
    npt.assert_allclose(analytic, fd, atol=1e-8)


def test_dilation_is_unitary(two_level):
    K = propagator(two_level.hamiltonian(), 0.3, 0.5)
    U = dilate_contraction(K)
    npt.assert_allclose(U @ dagger(U), np.eye(4), atol=1e-12)
    npt.assert_allclose(U[:2, :2], K, atol=1e-15)


def test_dilation_rejects_expansion():
    with pytest.raises(NonDissipativeError):
        dilate_contraction(2.0 * np.eye(2))


def test_full_hamiltonian_dynamics_leaks():
    dynamics = LeakyLevelModel().local_dynamics()
    assert dynamics.dim_m == 2
    assert dynamics.full_space is not None
    family = dynamics.accessible_family(np.diag([0.0, 1.0]).astype(complex), 0.5)
    rho, drho = family.at(0.0)
    assert 0.0 < np.trace(rho).real < 1.0
    fd = central_difference(family.state, 0.0)
    npt.assert_allclose(drho, 0.5 * (fd + dagger(fd)), atol=1e-8)


def test_full_hamiltonian_must_be_hermitian(two_level):
    with pytest.raises(NonHermitianError):
        LocalDynamics.from_full_hamiltonian(two_level.hamiltonian(), LeakyLevelModel.projector())


def test_channel_from_unitary_compresses_full_evolution(rng):
    model = LeakyLevelModel()
    H, P = model.hamiltonian(), model.projector()
    g, t = 0.2, 0.7
    channel = channel_from_unitary(H, P, g, t)
    rho = random_density_matrix(2, rng)
    U = propagator(H, g, t)
    full = U @ P.embed(rho) @ dagger(U)
    npt.assert_allclose(channel.apply(rho), P.compress(full), atol=1e-12)
    assert np.trace(channel.apply(rho)).real <= 1.0 + 1e-12


def test_channel_from_unitary_rejects_effective_hamiltonian(two_level):
    with pytest.raises(NonHermitianError):
        channel_from_unitary(two_level.hamiltonian(), SubspaceProjector.from_indices(2, [0, 1]), 0.0, 1.0)


def _leaky_generator(rng, dim=3):
    # non-Hermitian H with decay out of M, plus one jump that keeps population in M
    H = random_hermitian(dim, rng) - 0.4j * np.eye(dim)
    jump = np.zeros((dim, dim), dtype=complex)
    jump[0, dim - 1] = 1.0
    return LindbladGenerator.from_operators(H, [jump], [0.7])


def test_generator_matches_short_time_channel(rng):
    T = _leaky_generator(rng)
    X = random_hermitian(3, rng)
    delta = 1e-7
    step = channel_from_lindblad(T, delta).apply(X)
    npt.assert_allclose((step - X) / delta, T.apply(X), atol=1e-4)


def test_effective_lindblad_matches_nonhermitian_evolution(two_level):
    H, g, t = two_level.hamiltonian(), 0.05, 0.9
    channel = channel_from_lindblad(LindbladGenerator.from_effective_hamiltonian(H, g), t)
    rho_t = evolve_nonhermitian(H, DensityOperator(RHO_PLUS), g, t)
    npt.assert_allclose(channel.apply(RHO_PLUS), rho_t.matrix, atol=1e-12)


def test_lindblad_identity_and_semigroup(rng):
    T = _leaky_generator(rng)
    npt.assert_allclose(channel_from_lindblad(T, 0.0).superop, np.eye(9), atol=1e-14)
    s, u = 0.3, 0.5
    product = channel_from_lindblad(T, s).superop @ channel_from_lindblad(T, u).superop
    npt.assert_allclose(product, channel_from_lindblad(T, s + u).superop, atol=1e-10)


def test_lindblad_channel_preserves_positivity(rng):
    channel = channel_from_lindblad(_leaky_generator(rng), 0.8)
    for _ in range(100):
        rho = random_density_matrix(3, rng, rank=int(rng.integers(1, 4)))
        out = channel.apply(rho)
        npt.assert_allclose(out, dagger(out), atol=1e-12)
        assert np.linalg.eigvalsh(out)[0] >= -1e-12
        assert np.trace(out).real <= 1.0 + 1e-12


def test_compressed_unitary_channel_choi(rng):
    H = HamiltonianFamily.from_polynomial([random_hermitian(4, rng), random_hermitian(4, rng)], hermitian=True)
    channel = channel_from_unitary(H, SubspaceProjector.from_indices(4, [0, 1]), 0.3, 0.8)
    choi = channel.choi()
    npt.assert_allclose(choi, dagger(choi), atol=1e-12)
    assert np.linalg.eigvalsh(choi)[0] >= -1e-12
    assert channel.is_completely_positive()
    # trace non-increasing: the dual map sends the identity below the identity
    assert np.linalg.eigvalsh(np.eye(2) - _dual_identity(channel))[0] >= -1e-12


def _dual_identity(channel):
    d = channel.dim_m
    # Tr[Gamma(E_ij)] for every matrix unit gives the dual of the identity
    out = np.zeros((d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            E = np.zeros((d, d))
            E[i, j] = 1.0
            out[j, i] = np.trace(channel.apply(E))
    return out


def test_accessible_trace_never_increases(two_level, rng):
    ts = np.linspace(0.0, 3.0, 31)
    effective = two_level.local_dynamics()
    traces = [np.trace(effective.channel(0.1, t).apply(RHO_PLUS)).real for t in ts]
    assert np.all(np.diff(traces) <= 1e-12)

    T = _leaky_generator(rng)
    rho0 = random_density_matrix(3, rng)
    traces = [np.trace(channel_from_lindblad(T, t).apply(rho0)).real for t in ts]
    assert np.all(np.diff(traces) <= 1e-12)
