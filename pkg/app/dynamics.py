"""
Time reversal, time-reversal-invariant interactions and unitary evolution.

Theta acts as (basis permutation) o (complex conjugation) in the product
energy eigenbasis. Interactions are generated real symmetric in that basis
and symmetrized under the permutation, so Theta^dag H Theta = H.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import brentq

from app.config import MEAN_TOL_FACTOR, RETRY_CAP, SHELL_TOL, UNITARY_TOL
from app.errors import DimensionError, GenerationError, InvalidSymmetryError, NonUnitaryError
from app.linalg import (
    ComplexOperator,
    DensityMatrix,
    HermitianOperator,
    as_array,
    eigh,
    expm_i,
    group_levels,
    max_norm,
    unitarity_deviation,
)
from app.models import InteractionSpec

logger = logging.getLogger(__name__)

ENERGY_MATCH_TOL = 1e-12


def _energy_frame(h_a, h_b) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Product energy basis W and the local spectra of H_A and H_B."""
    e_a, v_a = eigh(h_a)
    e_b, v_b = eigh(h_b)
    return np.kron(v_a, v_b), e_a, e_b


def free_hamiltonian(h_a, h_b) -> HermitianOperator:
    """H_A (x) I + I (x) H_B."""
    a, b = as_array(h_a), as_array(h_b)
    return HermitianOperator(np.kron(a, np.eye(b.shape[0])) + np.kron(np.eye(a.shape[0]), b))


class TimeReversal:
    """
    Anti-unitary Theta = W P K W^dag, where K is complex conjugation in
    the product energy basis W and P an involutive permutation of its kets.
    """

    def __init__(self, permutation: np.ndarray, basis: np.ndarray, dims: Tuple[int, int]):
        perm = np.array(permutation, dtype=int)
        perm.setflags(write=False)
        self.permutation = perm
        self.basis = np.array(basis, dtype=complex)
        self.basis.setflags(write=False)
        self.dims = dims

    @property
    def dim(self) -> int:
        return self.permutation.size

    def image(self, index: int) -> int:
        """Index of Theta |k> among the product energy kets."""
        return int(self.permutation[index])

    def to_energy(self, op) -> np.ndarray:
        w = self.basis
        return w.conj().T @ as_array(op) @ w

    def from_energy(self, matrix: np.ndarray) -> np.ndarray:
        w = self.basis
        return w @ matrix @ w.conj().T

    def apply(self, vector) -> np.ndarray:
        """Theta |v>."""
        coords = self.basis.conj().T @ np.asarray(vector, dtype=complex)
        return self.basis @ coords.conj()[self.permutation]

    def conjugate(self, op) -> np.ndarray:
        """Theta A Theta^dag (equal to Theta^dag A Theta since P is an involution)."""
        perm = self.permutation
        return self.from_energy(self.to_energy(op).conj()[perm][:, perm])


def make_time_reversal(permutation, h_a, h_b) -> TimeReversal:
    """
    Build Theta from a permutation of product energy kets.

    Args:
        permutation: Index map on phi * d_B + chi, or None for the identity
        h_a: Hamiltonian of A
        h_b: Hamiltonian of B

    Returns:
        TimeReversal acting in the eigenbasis of H_A (x) I + I (x) H_B
    """
    w, e_a, e_b = _energy_frame(h_a, h_b)
    d_a, d_b = e_a.size, e_b.size
    n = d_a * d_b
    perm = np.arange(n) if permutation is None else np.asarray(permutation, dtype=int)

    if perm.shape != (n,) or sorted(perm.tolist()) != list(range(n)):
        raise InvalidSymmetryError(f"permutation must be a bijection on {n} product indices")
    if not np.array_equal(perm[perm], np.arange(n)):
        raise InvalidSymmetryError("permutation is not an involution")

    phi, chi = np.divmod(np.arange(n), d_b)
    phi_img, chi_img = np.divmod(perm, d_b)
    shift = max(max_norm(e_a[phi_img] - e_a[phi]), max_norm(e_b[chi_img] - e_b[chi]))
    if shift > ENERGY_MATCH_TOL:
        raise InvalidSymmetryError(f"permutation changes subsystem energies (by up to {shift:.3e})")
    return TimeReversal(perm, w, (d_a, d_b))


def swap_unitary(d: int) -> ComplexOperator:
    """SWAP on C^d (x) C^d."""
    swap = np.zeros((d * d, d * d))
    for i in range(d):
        for k in range(d):
            swap[k * d + i, i * d + k] = 1.0
    return ComplexOperator(swap)


def _normalize(coupling: np.ndarray, strength: float) -> np.ndarray:
    peak = max_norm(coupling)
    if peak == 0.0 or strength == 0.0:
        return np.zeros_like(coupling)
    return coupling * (strength / peak)


def _symmetric_draw(rng: np.random.Generator, n: int, perm: np.ndarray,
                    mask: Optional[np.ndarray]) -> np.ndarray:
    draw = rng.standard_normal((n, n))
    coupling = 0.5 * (draw + draw.T)
    if mask is not None:
        coupling = coupling * mask
    return 0.5 * (coupling + coupling[perm][:, perm])


def random_trs_hamiltonian(spec: InteractionSpec, h_a, h_b,
                           theta: Optional[TimeReversal] = None,
                           rho: Optional[DensityMatrix] = None) -> HermitianOperator:
    """
    Generate a time-reversal-invariant interaction H_int.

    Args:
        spec: Mode, coupling, duration, strength, seed, mean tolerance
        h_a: Hamiltonian of A
        h_b: Hamiltonian of B
        theta: Time reversal (conjugation in the energy basis if None)
        rho: Target state, required by mean_conserving mode

    Returns:
        H_int, real symmetric in the product energy basis with max entry = strength
    """
    theta = theta or make_time_reversal(None, h_a, h_b)
    w, e_a, e_b = _energy_frame(h_a, h_b)
    energies = np.add.outer(e_a, e_b).ravel()
    n = energies.size
    perm = theta.permutation

    if spec.mode == "strict":
        labels = group_levels(energies, SHELL_TOL)
        mask = labels[:, None] == labels[None, :]
        logger.debug("strict mode: %d shells over %d product states", labels.max() + 1, n)
        if spec.coupling == "exchange":
            coupling = spec.strength * (mask & ~np.eye(n, dtype=bool)).astype(float)
        else:
            rng = np.random.default_rng(spec.seed)
            coupling = _normalize(_symmetric_draw(rng, n, perm, mask), spec.strength)
    else:
        if rho is None:
            raise ValueError("mean_conserving mode needs the target state rho")
        free = free_hamiltonian(h_a, h_b)
        mean_tol = spec.mean_tol or MEAN_TOL_FACTOR * max_norm(free.data)
        coupling = _mean_conserving_coupling(spec, energies, w, as_array(rho), perm, mean_tol)

    return HermitianOperator(w @ coupling @ w.conj().T)


def _mean_conserving_coupling(spec: InteractionSpec, energies: np.ndarray, w: np.ndarray,
                              rho: np.ndarray, perm: np.ndarray, mean_tol: float) -> np.ndarray:
    """
    Draw unrestricted real symmetric couplings until the mean free energy is
    conserved within mean_tol. Draws come in antithetic pairs (G, -G). A
    candidate whose drift has the opposite sign of an earlier candidate
    from another pair is joined to it by a line, and the zero of the drift
    along that line is located with Brent's method.

    Passive states (populations non-increasing in energy, no coherence)
    only ever heat up, so no bracket exists and generation fails.
    """
    n = energies.size
    rho_e = w.conj().T @ rho @ w
    h0 = np.diag(energies)

    def drift(coupling: np.ndarray) -> float:
        u = as_array(expm_i(h0 + coupling, spec.t))
        return float(np.real(np.trace((u @ rho_e @ u.conj().T - rho_e) @ h0)))

    def along(a: np.ndarray, b: np.ndarray, s: float) -> np.ndarray:
        return _normalize((1.0 - s) * a + s * b, spec.strength)

    def candidates():
        rng = np.random.default_rng(spec.seed)
        pair = 0
        while True:
            draw = _normalize(_symmetric_draw(rng, n, perm, None), spec.strength)
            yield draw, pair
            yield -draw, pair
            pair += 1

    last = {}
    for attempt, (cand, pair) in zip(range(RETRY_CAP), candidates()):
        cand_drift = drift(cand)
        if abs(cand_drift) <= mean_tol:
            logger.debug("mean_conserving: accepted draw %d (drift %.2e)", attempt, cand_drift)
            return cand
        heating = cand_drift > 0
        other = last.get(not heating)
        if other is not None and other[1] != pair:
            start = other[0]
            root = brentq(lambda s: drift(along(start, cand, s)), 0.0, 1.0, xtol=1e-14)
            bridged = along(start, cand, root)
            residual = drift(bridged)
            if abs(residual) <= mean_tol:
                logger.debug("mean_conserving: bracketed root after %d draws (drift %.2e)", attempt + 1, residual)
                return bridged
        last[heating] = (cand, pair)

    raise GenerationError(f"no mean-conserving interaction within {RETRY_CAP} draws (mean_tol={mean_tol:.2e})")


def evolution_operator(h_a, h_b, h_int, t: float) -> ComplexOperator:
    """U = exp(-i (H_A + H_B + H_int) t)."""
    return expm_i(as_array(free_hamiltonian(h_a, h_b)) + as_array(h_int), t)


def evolve(u, rho) -> DensityMatrix:
    """U rho U^dag."""
    dev = unitarity_deviation(u)
    if dev > UNITARY_TOL:
        raise NonUnitaryError(f"evolution operator deviates from unitarity by {dev:.3e}")
    arr = as_array(u)
    return DensityMatrix(arr @ as_array(rho) @ arr.conj().T)


def check_trs(u, theta: TimeReversal) -> float:
    """max |U - Theta^dag U^dag Theta|."""
    arr = as_array(u)
    return max_norm(arr - theta.conjugate(arr.conj().T))


def transition_symmetry_deviation(u, theta: TimeReversal) -> float:
    """max over kets of | |<b|U|a>|^2 - |<Theta a|U|Theta b>|^2 |."""
    probs = np.abs(theta.to_energy(u)) ** 2
    perm = theta.permutation
    return max_norm(probs - probs[perm][:, perm].T)


def check_energy_conservation(rho, u, h_a, h_b) -> float:
    """|tr[(U rho U^dag - rho)(H_A + H_B)]|."""
    free = as_array(free_hamiltonian(h_a, h_b))
    state, arr = as_array(rho), as_array(u)
    if state.shape != free.shape or arr.shape != free.shape:
        raise DimensionError(f"state {state.shape} and unitary {arr.shape} do not match {free.shape}")
    moved = arr @ state @ arr.conj().T - state
    return abs(float(np.real(np.trace(moved @ free))))
