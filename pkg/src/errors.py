"""
Errors raised by the local Fisher information toolkit.

Every error is a ValueError so callers that only care about "bad input"
can catch one type. The CLI maps these to exit code 3.
"""

from typing import Optional, Tuple


class LocalFisherError(ValueError):
    """Base class for all toolkit errors."""


class NonHermitianError(LocalFisherError):
    """A matrix that must be Hermitian is not."""

    def __init__(self, defect: float, what: str = "matrix"):
        self.defect = defect
        super().__init__(f"{what} is not Hermitian: max|M - M^dagger| = {defect:.3e}")


class DimensionMismatchError(LocalFisherError):
    """Operand dimensions are incompatible."""


class InvalidStateError(LocalFisherError):
    """A density operator violates positivity or its trace class."""


class NotAvailableObservableError(LocalFisherError):
    """An observable mixes the accessible subspace with its complement."""


class OutsideTimeDomainError(LocalFisherError):
    """The accessible trace vanished: the evaluation time is at or beyond t*."""

    def __init__(self, trace: float):
        self.trace = trace
        super().__init__(
            f"accessible trace {trace:.3e} is below the validity threshold; "
            "the state has left the accessible subspace"
        )


class NonDissipativeError(LocalFisherError):
    """An effective Hamiltonian increased the trace of the state."""

    def __init__(self, trace: float):
        self.trace = trace
        super().__init__(f"trace grew to {trace:.12g}; effective Hamiltonian is not dissipative")


class InconsistentDerivativeError(LocalFisherError):
    """The derivative cannot belong to a family with the given state."""


class InsensitiveEstimatorError(LocalFisherError):
    """The estimator's expectation does not depend on g."""

    def __init__(self, slope: float):
        self.slope = slope
        super().__init__(f"estimator is insensitive to g: |dE/dg| = {abs(slope):.3e}")


class PositivityError(LocalFisherError):
    """A descendant block came out clearly non-positive."""

    def __init__(self, subsequence: Tuple[int, ...], min_eigenvalue: float):
        self.subsequence = subsequence
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"block {list(subsequence)} has min eigenvalue {min_eigenvalue:.3e}"
        )


class DirectPathUnavailableError(LocalFisherError):
    """Full-space evolution is not available; use descendants_via_channels."""


class MatrixOverflowError(LocalFisherError):
    """A matrix exponential overflowed."""

    def __init__(self, norm: float, detail: Optional[str] = None):
        self.norm = norm
        msg = f"matrix exponential overflow (|M| = {norm:.3e})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class ConfigurationError(ValueError):
    """A run configuration or environment setting is invalid (CLI exit code 2)."""
