"""
Gibbs states and correlated joint states with exactly thermal marginals.

Joint states are assembled in the product energy eigenbasis W = V_A (x) V_B
(the eigensolver bases of H_A and H_B) and rotated back to the
computational basis.
"""
import logging
from typing import List, Tuple

import numpy as np

from app.config import MARGINAL_TOL, SHELL_TOL
from app.errors import DimensionError, IncompatibleSpectraError, MarginalError
from app.linalg import DensityMatrix, as_array, group_levels, kron, max_norm, partial_trace
from app.models import JointStateSpec, MarginalReport, ThermalSpec

logger = logging.getLogger(__name__)

PAIRING_TOL = 1e-10

Specs = Tuple[ThermalSpec, ThermalSpec]


def gibbs_state(spec: ThermalSpec) -> DensityMatrix:
    """rho = exp(-beta H) / Z, built from the spectral decomposition of H."""
    v = spec.basis
    return DensityMatrix((v * spec.pmf) @ v.conj().T)


def product_state(rho_a: DensityMatrix, rho_b: DensityMatrix) -> DensityMatrix:
    return kron(rho_a, rho_b)


def product_basis(specs: Specs) -> np.ndarray:
    """Columns are the product energy kets |phi, chi>, index phi * d_B + chi."""
    return np.kron(specs[0].basis, specs[1].basis)


def total_energies(specs: Specs) -> np.ndarray:
    """E_phi + E_chi for every product index."""
    return np.add.outer(specs[0].energies, specs[1].energies).ravel()


def energy_shells(specs: Specs, tol: float = SHELL_TOL) -> np.ndarray:
    """Shell label of every product index; shells group equal total energies."""
    return group_levels(total_energies(specs), tol)


def from_energy_basis(matrix: np.ndarray, specs: Specs) -> DensityMatrix:
    w = product_basis(specs)
    return DensityMatrix(w @ matrix @ w.conj().T)


def comonotone_coupling(p: np.ndarray, r: np.ndarray) -> np.ndarray:
    """
    Maximally correlated joint pmf with marginals p and r.

    Both pmfs are sorted in descending order and mass is assigned by the
    north-west-corner rule, then the result is mapped back to the
    original indices.
    """
    order_p = np.argsort(-p, kind="stable")
    order_r = np.argsort(-r, kind="stable")
    left_p = p[order_p].astype(float)
    left_r = r[order_r].astype(float)

    coupling = np.zeros((p.size, r.size))
    i = j = 0
    while i < p.size and j < r.size:
        mass = min(left_p[i], left_r[j])
        coupling[order_p[i], order_r[j]] += mass
        left_p[i] -= mass
        left_r[j] -= mass
        if left_p[i] <= left_r[j]:
            i += 1
        else:
            j += 1
    return coupling


def classical_coupled_state(spec: JointStateSpec) -> DensityMatrix:
    """Diagonal state with pmf (1 - lambda) p (x) r + lambda * comonotone(p, r)."""
    spec_a, spec_b = spec.specs
    p, r = spec_a.pmf, spec_b.pmf
    lam = spec.lambda_
    joint = (1.0 - lam) * np.outer(p, r) + lam * comonotone_coupling(p, r)
    return from_energy_basis(np.diag(joint.ravel()).astype(complex), spec.specs)


def _pairing(spec_a: ThermalSpec, spec_b: ThermalSpec) -> np.ndarray:
    if spec_a.dim != spec_b.dim:
        raise IncompatibleSpectraError(f"thermofield pairing needs d_A = d_B, got {spec_a.dim} and {spec_b.dim}")
    p, r = spec_a.pmf, spec_b.pmf
    order_p = np.argsort(-p, kind="stable")
    order_r = np.argsort(-r, kind="stable")
    deviation = max_norm(p[order_p] - r[order_r])
    if deviation > PAIRING_TOL:
        raise IncompatibleSpectraError(
            f"Gibbs pmfs differ as sorted vectors (max pmf deviation {deviation:.3e})"
        )
    pairing = np.empty(p.size, dtype=int)
    pairing[order_p] = order_r
    return pairing


def thermofield_pure_state(spec: JointStateSpec) -> DensityMatrix:
    """Pure state sum_k sqrt(p_k) |phi_k> (x) |chi_pi(k)> with both marginals Gibbs."""
    spec_a, spec_b = spec.specs
    pairing = _pairing(spec_a, spec_b)
    d_b = spec_b.dim
    psi = np.zeros(spec_a.dim * d_b, dtype=complex)
    psi[np.arange(spec_a.dim) * d_b + pairing] = np.sqrt(spec_a.pmf)
    return from_energy_basis(np.outer(psi, psi.conj()), spec.specs)


def shell_pairs(specs: Specs) -> List[Tuple[int, int]]:
    """
    Disjoint pairs of product indices inside each total-energy shell whose
    local indices both differ. Greedy in ascending index order.
    """
    d_b = specs[1].dim
    labels = energy_shells(specs)
    pairs = []
    for label in np.unique(labels):
        members = list(np.flatnonzero(labels == label))
        taken = set()
        for pos, a in enumerate(members):
            if a in taken:
                continue
            for b in members[pos + 1:]:
                if b in taken:
                    continue
                if a // d_b != b // d_b and a % d_b != b % d_b:
                    pairs.append((int(a), int(b)))
                    taken.update((a, b))
                    break
    return pairs


def coherent_shell_state(spec: JointStateSpec) -> DensityMatrix:
    """
    Product Gibbs populations plus imaginary coherences of relative size
    lambda between paired states of each total-energy shell.
    """
    spec_a, spec_b = spec.specs
    joint = np.outer(spec_a.pmf, spec_b.pmf).ravel()
    matrix = np.diag(joint).astype(complex)
    for a, b in shell_pairs(spec.specs):
        c = spec.lambda_ * np.sqrt(joint[a] * joint[b])
        matrix[a, b] = 1j * c
        matrix[b, a] = -1j * c
    return from_energy_basis(matrix, spec.specs)


def verify_thermal_marginals(rho, specs: Specs, tol: float = MARGINAL_TOL) -> MarginalReport:
    """Max-norm distance of both marginals from their Gibbs states."""
    dims = (specs[0].dim, specs[1].dim)
    if as_array(rho).shape != (dims[0] * dims[1],) * 2:
        raise DimensionError(f"state of shape {as_array(rho).shape} does not match dims {dims}")
    dev_a = max_norm(as_array(partial_trace(rho, dims, keep="A")) - as_array(gibbs_state(specs[0])))
    dev_b = max_norm(as_array(partial_trace(rho, dims, keep="B")) - as_array(gibbs_state(specs[1])))
    return MarginalReport(deviation_a=dev_a, deviation_b=dev_b, tolerance=tol,
                          passed=dev_a <= tol and dev_b <= tol)


def interpolated_state(rho_corr, spec: JointStateSpec) -> DensityMatrix:
    """(1 - lambda) rho_A (x) rho_B + lambda rho_corr."""
    report = verify_thermal_marginals(rho_corr, spec.specs)
    if not report.passed:
        raise MarginalError(
            f"correlated endpoint is not thermal (deviations {report.deviation_a:.3e}, {report.deviation_b:.3e})"
        )
    lam = spec.lambda_
    product = product_state(gibbs_state(spec.specs[0]), gibbs_state(spec.specs[1]))
    return DensityMatrix((1.0 - lam) * product.data + lam * as_array(rho_corr))


def build_joint_state(spec: JointStateSpec) -> DensityMatrix:
    """Construct the state named by spec.family."""
    if spec.family == "product":
        rho = product_state(gibbs_state(spec.specs[0]), gibbs_state(spec.specs[1]))
    elif spec.family == "classical_coupled":
        rho = classical_coupled_state(spec)
    elif spec.family == "thermofield_pure":
        rho = thermofield_pure_state(spec)
    elif spec.family == "coherent_shell":
        rho = coherent_shell_state(spec)
    else:
        endpoint = spec.model_copy(update={"family": spec.correlated, "lambda_": 1.0})
        rho = interpolated_state(build_joint_state(endpoint), spec)
    logger.debug("built %s state (lambda=%.3f, dim=%d)", spec.family, spec.lambda_, rho.dim)
    return rho
