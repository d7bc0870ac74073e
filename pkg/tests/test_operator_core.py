import numpy as np
import numpy.testing as npt
import pytest

from src.errors import DimensionMismatchError, InvalidStateError, MatrixOverflowError, NonHermitianError
from src.operator_core import (
    clip_psd,
    dagger,
    hermitian_basis,
    hermitian_eig,
    matrix_exp,
    merged_spectrum,
    partial_trace,
    psd_sqrt,
    require_hermitian,
    sld_decomposition,
    solve_sld,
    tensor,
    unvec,
    vec,
)
from src.random_ops import random_density_matrix, random_hermitian, random_unitary

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


def test_require_hermitian_rejects_nilpotent():
    with pytest.raises(NonHermitianError):
        require_hermitian(np.array([[0, 1], [0, 0]], dtype=complex))


def test_require_hermitian_symmetrizes_rounding_noise():
    M = SIGMA_X + 1e-15j * np.array([[0, 1], [0, 0]])
    H = require_hermitian(M)
    npt.assert_array_equal(H, dagger(H))


def test_hermitian_eig_sorted_descending(rng):
    H = random_hermitian(4, rng)
    lam, V = hermitian_eig(H)
    assert np.all(np.diff(lam) <= 0)
    npt.assert_allclose(V @ np.diag(lam) @ dagger(V), H, atol=1e-12)


def test_clip_psd_removes_dust_and_rejects_negative():
    clipped = clip_psd(np.diag([1.0, -1e-12]))
    assert np.linalg.eigvalsh(clipped)[0] >= 0
    with pytest.raises(InvalidStateError):
        clip_psd(np.diag([1.0, -0.1]))


def test_psd_sqrt_squares_back(rng):
    rho = random_density_matrix(3, rng)
    S = psd_sqrt(rho)
    npt.assert_allclose(S @ S, rho, atol=1e-12)


def test_tensor_row_major_convention():
    e0, e1 = np.eye(2)
    ket = tensor(e0[:, None], e1[:, None]).ravel()
    assert ket[1] == 1.0 and ket.sum() == 1.0


def test_tensor_needs_operands():
    with pytest.raises(DimensionMismatchError):
        tensor()


def test_partial_trace_of_product(rng):
    A = random_density_matrix(2, rng)
    B = random_density_matrix(3, rng)
    C = random_density_matrix(2, rng)
    ABC = tensor(A, B, C)
    npt.assert_allclose(partial_trace(ABC, [2, 3, 2], [1]), tensor(A, C), atol=1e-12)
    npt.assert_allclose(partial_trace(ABC, [2, 3, 2], [0, 2]), B, atol=1e-12)
    npt.assert_allclose(partial_trace(ABC, [2, 3, 2], [0, 1, 2]), [[1.0]], atol=1e-12)


def test_partial_trace_rejects_bad_dims():
    with pytest.raises(DimensionMismatchError):
        partial_trace(np.eye(4), [2, 3], [0])
    with pytest.raises(DimensionMismatchError):
        partial_trace(np.eye(4), [2, 2], [2])


def test_matrix_exp_overflow():
    with pytest.raises(MatrixOverflowError):
        matrix_exp(np.array([[1000.0]]))


def test_matrix_exp_unitary(rng):
    H = random_hermitian(3, rng)
    U = matrix_exp(-1j * H)
    npt.assert_allclose(U @ dagger(U), np.eye(3), atol=1e-12)


def test_vec_column_stacking(rng):
    A, X, B = (rng.normal(size=(3, 3)) for _ in range(3))
    npt.assert_allclose(vec(A @ X @ B), np.kron(B.T, A) @ vec(X), atol=1e-12)
    npt.assert_array_equal(unvec(vec(X), 3), X)


def test_hermitian_basis_qubit_is_pauli():
    basis = hermitian_basis(2)
    for e, expected in zip(basis.elements, [np.eye(2), SIGMA_X, SIGMA_Y, SIGMA_Z]):
        npt.assert_allclose(e, expected, atol=1e-15)


@pytest.mark.parametrize("dim", [1, 3, 4])
def test_hermitian_basis_trace_orthogonal(dim, rng):
    basis = hermitian_basis(dim)
    assert len(basis.elements) == dim * dim
    npt.assert_allclose(basis.gram(), 2.0 * np.eye(dim * dim), atol=1e-12)
    H = random_hermitian(dim, rng)
    npt.assert_allclose(basis.reconstruct(basis.coefficients(H)), H, atol=1e-12)


def test_sld_maximally_mixed_qubit():
    L = solve_sld(np.eye(2) / 2, SIGMA_Z / 2)
    npt.assert_allclose(L, SIGMA_Z, atol=1e-12)


def test_sld_solves_lyapunov_equation(rng):
    rho = random_density_matrix(4, rng)
    X = random_hermitian(4, rng)
    drho = 1j * (X @ rho - rho @ X)
    L = solve_sld(rho, drho)
    npt.assert_allclose(L, dagger(L), atol=1e-12)
    npt.assert_allclose((rho @ L + L @ rho) / 2, drho, atol=1e-10)


def test_sld_rank_deficient_support(rng):
    U = random_unitary(3, rng)
    rho = U @ np.diag([0.6, 0.4, 0.0]) @ dagger(U)
    X = random_hermitian(3, rng)
    drho = X @ rho + rho @ X
    sol = sld_decomposition(rho, drho)
    assert sol.support_rank == 2
    assert sol.consistent
    npt.assert_allclose((rho @ sol.sld + sol.sld @ rho) / 2, drho, atol=1e-10)


def test_sld_flags_kernel_components():
    sol = sld_decomposition(np.diag([1.0, 0.0]), np.diag([-0.5, 0.5]))
    assert not sol.consistent
    assert sol.kernel_defect == pytest.approx(0.5)


def test_merged_spectrum_merges_degenerate_levels():
    outcomes, projectors = merged_spectrum(np.diag([1.0, 1.0 + 1e-14, -2.0]))
    npt.assert_allclose(outcomes, [1.0, -2.0])
    assert len(projectors) == 2
    npt.assert_allclose(sum(projectors), np.eye(3), atol=1e-12)
    npt.assert_allclose(np.trace(projectors[0]).real, 2.0)


def test_partial_trace_of_bell_state():
    phi = np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2)
    bell = np.outer(phi, phi.conj())
    npt.assert_allclose(partial_trace(bell, [2, 2], [0]), np.eye(2) / 2, atol=1e-15)
    npt.assert_allclose(partial_trace(bell, [2, 2], [1]), np.eye(2) / 2, atol=1e-15)
