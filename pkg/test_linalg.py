"""
Tests for the dense linear algebra kernel.
Run: pytest test_linalg.py
"""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import DimensionError, NumericalError
from app.linalg import (
    ComplexOperator,
    DensityMatrix,
    HermitianOperator,
    eigh,
    expm_i,
    group_levels,
    kron,
    mutual_information,
    partial_trace,
    von_neumann_entropy,
)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]])


def random_hermitian(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return 0.5 * (g + g.conj().T)


def random_density(rng: np.random.Generator, d: int) -> np.ndarray:
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def bell_state() -> np.ndarray:
    psi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    return np.outer(psi, psi)


# --- Operators --- #

def test_operator_rejects_non_square():
    with pytest.raises(DimensionError):
        ComplexOperator(np.zeros((2, 3)))
    with pytest.raises(DimensionError):
        ComplexOperator(np.zeros((0, 0)))


def test_hermitian_rejects_asymmetry():
    with pytest.raises(NumericalError):
        HermitianOperator([[0, 1], [0, 0]])


def test_density_matrix_checks_trace_and_positivity():
    with pytest.raises(NumericalError):
        DensityMatrix(np.eye(2))
    with pytest.raises(NumericalError):
        DensityMatrix(np.diag([1.5, -0.5]))
    assert DensityMatrix(np.eye(2) / 2).purity() == pytest.approx(0.5)


def test_operator_data_is_read_only():
    op = HermitianOperator(SIGMA_X)
    with pytest.raises(ValueError):
        op.data[0, 0] = 1.0


# --- kron / partial_trace --- #

def test_kron_examples():
    np.testing.assert_array_equal(np.asarray(kron(np.eye(2), np.eye(2))), np.eye(4))
    np.testing.assert_array_equal(np.asarray(kron(np.diag([1, 0]), np.diag([0, 1]))), np.diag([0, 1, 0, 0]))
    ket_00 = np.array([1, 0, 0, 0])
    np.testing.assert_array_equal(np.asarray(kron(SIGMA_X, SIGMA_X)) @ ket_00, [0, 0, 0, 1])


def test_kron_keeps_wrapper_types():
    rho = DensityMatrix(np.eye(2) / 2)
    assert isinstance(kron(rho, rho), DensityMatrix)
    assert isinstance(kron(HermitianOperator(SIGMA_X), HermitianOperator(SIGMA_Y)), HermitianOperator)


def test_kron_is_associative():
    rng = np.random.default_rng(1)
    a, b, c = (rng.standard_normal((d, d)) for d in (2, 3, 2))
    np.testing.assert_allclose(np.asarray(kron(kron(a, b), c)), np.asarray(kron(a, kron(b, c))), atol=1e-14)


def test_partial_trace_examples():
    rho_a = np.diag([0.7, 0.3])
    rho_b = np.diag([0.4, 0.6])
    np.testing.assert_allclose(np.asarray(partial_trace(kron(rho_a, rho_b), (2, 2), keep="A")), rho_a, atol=1e-15)
    np.testing.assert_allclose(np.asarray(partial_trace(bell_state(), (2, 2), keep="A")), np.eye(2) / 2, atol=1e-15)
    reduced = partial_trace(np.diag([0.5, 0.2, 0.2, 0.1]), (2, 2), keep="A")
    np.testing.assert_allclose(np.asarray(reduced), np.diag([0.7, 0.3]), atol=1e-15)


def test_partial_trace_dimension_mismatch():
    with pytest.raises(DimensionError):
        partial_trace(np.eye(4) / 4, (2, 3), keep="A")


# --- eigh / expm_i --- #

def test_eigh_diagonal_and_sigma_x():
    w, v = eigh(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_allclose(w, [1, 2, 3])
    np.testing.assert_allclose(np.abs(v), np.eye(3)[:, [1, 2, 0]])

    w, v = eigh(SIGMA_X)
    np.testing.assert_allclose(w, [-1, 1], atol=1e-15)
    assert abs(abs(np.vdot(v[:, 0], [1, -1])) / math.sqrt(2) - 1) < 1e-12


def test_eigh_reconstructs_random_hermitian():
    h = random_hermitian(np.random.default_rng(8), 8)
    w, v = eigh(h)
    assert np.max(np.abs((v * w) @ v.conj().T - h)) <= 1e-10 * np.max(np.abs(h))
    assert np.max(np.abs(v.conj().T @ v - np.eye(8))) <= 1e-10


def test_eigh_tolerance_scales_with_small_operators(monkeypatch):
    small = 1e-3 * random_hermitian(np.random.default_rng(4), 4)
    w, _ = eigh(small)
    assert np.max(np.abs(w)) < 1e-2
    eigh(np.zeros((3, 3)))

    exact = np.linalg.eigh

    def off_by_1e11(arr):
        values, vectors = exact(arr)
        return values + 1e-11, vectors

    # 1e-11 is within 1e-10 absolute but not within 1e-10 of a 1e-3 operator
    monkeypatch.setattr(np.linalg, "eigh", off_by_1e11)
    with pytest.raises(NumericalError):
        eigh(small)


def test_expm_i_examples():
    h = random_hermitian(np.random.default_rng(2), 4)
    np.testing.assert_allclose(np.asarray(expm_i(h, 0.0)), np.eye(4), atol=1e-12)
    np.testing.assert_allclose(np.asarray(expm_i(np.diag([0.0, math.pi]), 1.0)), np.diag([1, -1]), atol=1e-12)
    np.testing.assert_allclose(np.asarray(expm_i(SIGMA_X, math.pi / 2)), -1j * SIGMA_X, atol=1e-12)


# --- Entropy --- #

ENTROPY_CASES = [
    (np.diag([1.0, 0.0]), 0.0, 1e-12),
    (np.eye(2) / 2, math.log(2), 1e-12),
    (np.diag([0.7311, 0.2689]), 0.5828, 1e-3),
]


@pytest.mark.parametrize("rho, expected, tol", ENTROPY_CASES)
def test_von_neumann_entropy(rho, expected, tol):
    assert von_neumann_entropy(rho) == pytest.approx(expected, abs=tol)


def test_entropy_of_pure_entangled_state_is_zero():
    assert von_neumann_entropy(bell_state()) == pytest.approx(0.0, abs=1e-12)


def test_entropy_rejects_non_probability_spectrum():
    with pytest.raises(NumericalError):
        von_neumann_entropy(np.diag([1.5, -0.5]))


def test_mutual_information_of_bell_state():
    assert mutual_information(bell_state(), (2, 2)) == pytest.approx(2 * math.log(2), abs=1e-12)
    product = np.asarray(kron(np.diag([0.6, 0.4]), np.diag([0.9, 0.1])))
    assert mutual_information(product, (2, 2)) == pytest.approx(0.0, abs=1e-12)


def test_group_levels():
    labels = group_levels([2.0, 0.0, 1.0 + 1e-12, 1.0, 2.0 + 5e-10], 1e-9)
    assert labels.tolist() == [2, 0, 1, 1, 2]


# --- Properties --- #

seeds = st.integers(min_value=0, max_value=2**32 - 1)
dims = st.integers(min_value=2, max_value=6)
times = st.floats(min_value=-3.0, max_value=3.0, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=dims, s=times, t=times)
def test_expm_group_property(seed, d, s, t):
    h = random_hermitian(np.random.default_rng(seed), d)
    product = np.asarray(expm_i(h, s)) @ np.asarray(expm_i(h, t))
    np.testing.assert_allclose(product, np.asarray(expm_i(h, s + t)), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=dims, t=times)
def test_hamiltonian_conserved_under_own_flow(seed, d, t):
    h = random_hermitian(np.random.default_rng(seed), d)
    u = np.asarray(expm_i(h, t))
    np.testing.assert_allclose(u @ h @ u.conj().T, h, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d=dims, t=times)
def test_entropy_is_unitarily_invariant(seed, d, t):
    rng = np.random.default_rng(seed)
    rho = random_density(rng, d)
    u = np.asarray(expm_i(random_hermitian(rng, d), t))
    assert abs(von_neumann_entropy(u @ rho @ u.conj().T) - von_neumann_entropy(rho)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(seed=seeds, d_a=st.integers(1, 4), d_b=st.integers(1, 4))
def test_partial_trace_preserves_trace(seed, d_a, d_b):
    rho = random_density(np.random.default_rng(seed), d_a * d_b)
    for keep in ("A", "B"):
        reduced = np.asarray(partial_trace(rho, (d_a, d_b), keep=keep))
        assert abs(np.trace(reduced).real - 1.0) <= 1e-12
