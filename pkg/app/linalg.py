"""
Dense complex linear algebra for XFT Lab.

Operators are thin immutable wrappers around square numpy arrays. All
functions accept either a wrapper or a plain array; units are hbar = k_B = 1.
"""
import logging
from typing import Literal, Tuple, Union

import numpy as np
from scipy.special import entr

from app.config import (
    EIGEN_CLIP,
    HERMITIAN_TOL,
    RECONSTRUCTION_TOL,
    TRACE_TOL,
    UNITARY_TOL,
)
from app.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)


class ComplexOperator:
    """Square complex matrix of dimension >= 1, read-only after construction."""

    __slots__ = ("_data",)

    def __init__(self, entries):
        arr = np.array(entries, dtype=np.complex128)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
            raise DimensionError(f"operator must be a non-empty square matrix, got shape {arr.shape}")
        arr = self._validate(arr)
        arr.setflags(write=False)
        self._data = arr

    def _validate(self, arr: np.ndarray) -> np.ndarray:
        return arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    def dagger(self) -> "ComplexOperator":
        return ComplexOperator(self._data.conj().T)

    def trace(self) -> complex:
        return complex(np.trace(self._data))

    def __array__(self, dtype=None, copy=None):
        if dtype is None and not copy:
            return self._data
        return np.array(self._data, dtype=dtype)

    def __matmul__(self, other) -> "ComplexOperator":
        return ComplexOperator(self._data @ as_array(other))

    def __repr__(self) -> str:
        return f"{type(self).__name__}(dim={self.dim})"


class HermitianOperator(ComplexOperator):
    """Self-adjoint operator; symmetrized after the self-adjointness check."""

    __slots__ = ()

    def _validate(self, arr: np.ndarray) -> np.ndarray:
        asym = max_norm(arr - arr.conj().T)
        if asym > HERMITIAN_TOL:
            raise NumericalError(f"operator is not self-adjoint (max asymmetry {asym:.3e})")
        return 0.5 * (arr + arr.conj().T)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self._data)


class DensityMatrix(HermitianOperator):
    """Positive semidefinite, unit-trace operator."""

    __slots__ = ()

    def _validate(self, arr: np.ndarray) -> np.ndarray:
        arr = super()._validate(arr)
        tr = np.trace(arr).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise NumericalError(f"density matrix trace is {tr!r}, expected 1")
        lowest = np.linalg.eigvalsh(arr)[0]
        if lowest < -EIGEN_CLIP:
            raise NumericalError(f"density matrix has negative eigenvalue {lowest:.3e}")
        return arr

    def purity(self) -> float:
        return float(np.real(np.vdot(self._data, self._data)))


Operator = Union[ComplexOperator, np.ndarray]


def as_array(op) -> np.ndarray:
    """Return the complex array behind an operator or array-like."""
    if isinstance(op, ComplexOperator):
        return op.data
    return np.asarray(op, dtype=np.complex128)


def max_norm(x) -> float:
    """Largest absolute entry."""
    arr = np.asarray(x)
    return float(np.max(np.abs(arr))) if arr.size else 0.0


def _rewrap(template, arr: np.ndarray):
    # keep the wrapper type of the input where the result still qualifies
    if isinstance(template, ComplexOperator):
        return type(template)(arr)
    return ComplexOperator(arr)


def kron(a, b):
    """Tensor product with composite index i * dim_B + k."""
    arr = np.kron(as_array(a), as_array(b))
    if isinstance(a, DensityMatrix) and isinstance(b, DensityMatrix):
        return DensityMatrix(arr)
    if isinstance(a, HermitianOperator) and isinstance(b, HermitianOperator):
        return HermitianOperator(arr)
    return ComplexOperator(arr)


def partial_trace(rho, dims: Tuple[int, int], keep: Literal["A", "B"]):
    """
    Reduce a bipartite operator to one subsystem.

    Args:
        rho: Operator on C^{d_A} (x) C^{d_B}
        dims: (d_A, d_B)
        keep: "A" to trace out B, "B" to trace out A

    Returns:
        The reduced operator, same wrapper type as the input
    """
    d_a, d_b = dims
    arr = as_array(rho)
    if arr.shape != (d_a * d_b, d_a * d_b):
        raise DimensionError(f"operator of shape {arr.shape} does not match dims {dims}")
    blocks = arr.reshape(d_a, d_b, d_a, d_b)
    if keep == "A":
        reduced = np.einsum("ijkj->ik", blocks)
    elif keep == "B":
        reduced = np.einsum("ijil->jl", blocks)
    else:
        raise ValueError(f"keep must be 'A' or 'B', got {keep!r}")
    return _rewrap(rho, reduced)


def eigh(h) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a Hermitian operator.

    Real symmetric input is decomposed in real arithmetic, so its
    eigenvectors come back real.

    Returns:
        (eigenvalues ascending, eigenvectors as orthonormal columns)
    """
    arr = as_array(h)
    if not np.any(arr.imag):
        arr = arr.real
    try:
        w, v = np.linalg.eigh(arr)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver did not converge: {exc}") from exc

    scale = max_norm(arr)
    recon = max_norm((v * w) @ v.conj().T - arr)
    ortho = max_norm(v.conj().T @ v - np.eye(arr.shape[0]))
    logger.debug("eigh dim=%d reconstruction=%.2e orthogonality=%.2e", arr.shape[0], recon, ortho)
    # the zero operator still gets an absolute floor
    limit = RECONSTRUCTION_TOL * scale if scale > 0 else RECONSTRUCTION_TOL
    if recon > limit or ortho > RECONSTRUCTION_TOL:
        raise NumericalError(
            f"eigendecomposition out of tolerance (reconstruction {recon:.2e}, orthogonality {ortho:.2e})"
        )
    w.setflags(write=False)
    v.setflags(write=False)
    return w, v


def unitarity_deviation(u) -> float:
    arr = as_array(u)
    return max_norm(arr.conj().T @ arr - np.eye(arr.shape[0]))


def expm_i(h, t: float) -> ComplexOperator:
    """Spectral exponential U = exp(-i H t)."""
    w, v = eigh(h)
    u = (v * np.exp(-1j * w * t)) @ v.conj().T
    dev = unitarity_deviation(u)
    if dev > UNITARY_TOL:
        raise NumericalError(f"exponential is not unitary (deviation {dev:.2e})")
    return ComplexOperator(u)


def von_neumann_entropy(rho) -> float:
    """Entropy in nats with 0 ln 0 = 0."""
    w = np.linalg.eigvalsh(as_array(rho))
    if w.size and (w[0] < -EIGEN_CLIP or w[-1] > 1.0 + EIGEN_CLIP):
        raise NumericalError(f"spectrum [{w[0]:.3e}, {w[-1]:.3e}] is not a probability vector")
    return float(np.sum(entr(np.clip(w, 0.0, 1.0))))


def mutual_information(rho, dims: Tuple[int, int]) -> float:
    """Quantum mutual information S_A + S_B - S_AB."""
    return (
        von_neumann_entropy(partial_trace(rho, dims, keep="A"))
        + von_neumann_entropy(partial_trace(rho, dims, keep="B"))
        - von_neumann_entropy(rho)
    )


def group_levels(values, tol: float) -> np.ndarray:
    """
    Label real values so that any two within tol (transitively) share a label.

    Labels are consecutive integers in ascending order of value.
    """
    vals = np.asarray(values, dtype=float)
    order = np.argsort(vals, kind="stable")
    breaks = np.diff(vals[order]) > tol
    sorted_labels = np.concatenate(([0], np.cumsum(breaks)))
    labels = np.empty(vals.size, dtype=int)
    labels[order] = sorted_labels
    return labels
