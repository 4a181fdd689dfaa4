"""
Two-point measurement protocol.

Measure both subsystems' energies, evolve with U, measure again. Every
history (phi, chi) -> (phi', chi') is materialized, zero-probability ones
included, together with its heat q, total-energy change, correlation
change and the id of its time-reversed twin.
"""
import logging
import math
from pathlib import Path
from typing import Iterator, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from app.config import BIN_TOL, EIGEN_CLIP, LOG_FLOOR, MAX_JOINT_DIM, PROB_FLOOR
from app.dynamics import TimeReversal
from app.errors import DimensionError, InvalidMeasurementError, UndefinedError
from app.export import atomic_write, frame_to_csv
from app.linalg import DensityMatrix, as_array, eigh, partial_trace
from app.models import History, TransitionClass

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["phi", "chi", "phi_p", "chi_p", "prob", "q", "delta_eps", "delta_I", "reverse_id"]


class Measurement(BaseModel):
    """
    Local measurement M (x) N with effects on A and on B.

    Sharp energy measurements also carry the eigenbases and energies they
    project onto; outcome (i, j) has product index i * d_B + j.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: Literal["sharp_energy", "general_povm"]
    effects_a: Tuple[np.ndarray, ...]
    effects_b: Tuple[np.ndarray, ...]
    energies_a: Optional[np.ndarray] = None
    energies_b: Optional[np.ndarray] = None
    basis_a: Optional[np.ndarray] = None
    basis_b: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check_effects(self):
        for side, effects in (("A", self.effects_a), ("B", self.effects_b)):
            if not effects:
                raise InvalidMeasurementError(f"measurement on {side} has no effects")
            dim = effects[0].shape[0]
            total = np.zeros((dim, dim), dtype=complex)
            for k, effect in enumerate(effects):
                if effect.shape != (dim, dim):
                    raise InvalidMeasurementError(f"effect {k} on {side} has shape {effect.shape}")
                lowest = np.linalg.eigvalsh(0.5 * (effect + effect.conj().T))[0]
                if lowest < -EIGEN_CLIP:
                    raise InvalidMeasurementError(f"effect {k} on {side} has negative eigenvalue {lowest:.3e}")
                total += effect
            gap = float(np.max(np.abs(total - np.eye(dim))))
            if gap > 1e-10:
                raise InvalidMeasurementError(f"effects on {side} do not sum to the identity (deviation {gap:.3e})")
        if self.kind == "sharp_energy" and (self.energies_a is None or self.energies_b is None):
            raise InvalidMeasurementError("sharp energy measurement needs the measured energies")
        return self

    @property
    def dims(self) -> Tuple[int, int]:
        return self.effects_a[0].shape[0], self.effects_b[0].shape[0]

    @property
    def elements(self) -> List[Tuple[int, int, np.ndarray, np.ndarray]]:
        """Every outcome pair (i, j, M_i, N_j)."""
        return [(i, j, m, n) for i, m in enumerate(self.effects_a) for j, n in enumerate(self.effects_b)]

    def product_basis(self) -> np.ndarray:
        return np.kron(self.basis_a, self.basis_b)


def _projectors(basis: np.ndarray) -> Tuple[np.ndarray, ...]:
    return tuple(np.outer(basis[:, k], basis[:, k].conj()) for k in range(basis.shape[1]))


def sharp_energy_measurement(h_a, h_b) -> Measurement:
    """Rank-1 projectors onto the eigensolver bases of H_A and H_B."""
    e_a, v_a = eigh(h_a)
    e_b, v_b = eigh(h_b)
    return Measurement(kind="sharp_energy", effects_a=_projectors(v_a), effects_b=_projectors(v_b),
                       energies_a=e_a, energies_b=e_b, basis_a=v_a, basis_b=v_b)


def _smeared(h, width: float) -> Tuple[np.ndarray, ...]:
    energies, basis = eigh(h)
    kernel = np.exp(-0.5 * ((energies[:, None] - energies[None, :]) / width) ** 2)
    kernel /= kernel.sum(axis=0, keepdims=True)
    return tuple((basis * kernel[i]) @ basis.conj().T for i in range(energies.size))


def smeared_energy_measurement(h_a, h_b, width: float) -> Measurement:
    """
    Unsharp energy readout: effect i mixes the energy projectors with
    Gaussian weights exp(-(E_i - E_k)^2 / 2 width^2), normalized over i.

    Args:
        h_a: Hamiltonian of A
        h_b: Hamiltonian of B
        width: Smearing width (> 0)

    Returns:
        general_povm Measurement
    """
    if width <= 0:
        raise ValueError("smearing width must be positive")
    return Measurement(kind="general_povm", effects_a=_smeared(h_a, width), effects_b=_smeared(h_b, width))


def _require_sharp(measurement: Measurement) -> None:
    if measurement.kind != "sharp_energy":
        raise ValueError("a sharp energy measurement is required here")


def dephase(rho, m1: Measurement) -> DensityMatrix:
    """sum over (phi, chi) of (M_phi (x) N_chi) rho (M_phi (x) N_chi)."""
    _require_sharp(m1)
    w = m1.product_basis()
    populations = np.real(np.diag(w.conj().T @ as_array(rho) @ w))
    return DensityMatrix((w * populations) @ w.conj().T)


def outcome_probability(rho, phi: int, chi: int, measurement: Measurement) -> float:
    """tr[(M_phi (x) N_chi) rho]."""
    d_a, d_b = measurement.dims
    if not (0 <= phi < d_a and 0 <= chi < d_b):
        raise IndexError(f"outcome ({phi}, {chi}) out of range for dims ({d_a}, {d_b})")
    effect = np.kron(measurement.effects_a[phi], measurement.effects_b[chi])
    return float(np.real(np.trace(effect @ as_array(rho))))


def correlation_index(rho, m, n) -> float:
    """
    ln( tr[(M (x) N) rho] / (tr[M rho_A] tr[N rho_B]) ).

    Returns -inf when the joint probability vanishes; raises UndefinedError
    when the product of marginal probabilities does.
    """
    m, n = np.asarray(m, dtype=complex), np.asarray(n, dtype=complex)
    dims = (m.shape[0], n.shape[0])
    state = as_array(rho)
    joint = float(np.real(np.trace(np.kron(m, n) @ state)))
    p_a = float(np.real(np.trace(m @ as_array(partial_trace(state, dims, keep="A")))))
    p_b = float(np.real(np.trace(n @ as_array(partial_trace(state, dims, keep="B")))))
    if p_a * p_b <= LOG_FLOOR:
        raise UndefinedError(f"marginal outcome probabilities vanish ({p_a:.3e}, {p_b:.3e})")
    if joint <= LOG_FLOOR:
        return -math.inf
    return math.log(joint) - math.log(p_a) - math.log(p_b)


def correlation_indices(joint: np.ndarray) -> np.ndarray:
    """
    Correlation index of every sharp outcome from the d_A x d_B outcome pmf,
    flattened to product indices. Unoccupied outcomes get -inf.
    """
    p_a = joint.sum(axis=1)
    p_b = joint.sum(axis=0)
    out = np.full(joint.shape, -math.inf)
    occupied = joint > LOG_FLOOR
    rows, cols = np.nonzero(occupied)
    out[occupied] = np.log(joint[occupied]) - np.log(p_a[rows]) - np.log(p_b[cols])
    return out.ravel()


class HistoryTable:
    """
    All (d_A d_B)^2 histories, row r holding history id r = i * D + f for
    initial product index i and final product index f.
    """

    def __init__(self, frame: pd.DataFrame, dims: Tuple[int, int], initial: np.ndarray,
                 indices: np.ndarray, permutation: np.ndarray):
        self.frame = frame
        self.dims = dims
        self.initial_distribution = initial
        self.correlation = indices
        self.permutation = permutation

    def __len__(self) -> int:
        return len(self.frame)

    def __iter__(self) -> Iterator[History]:
        for row in self.frame.itertuples(index=True):
            yield self._record(row)

    def __getitem__(self, history_id: int) -> History:
        row = next(self.frame.iloc[[history_id]].itertuples(index=True))
        return self._record(row)

    @staticmethod
    def _record(row) -> History:
        return History(id=int(row.Index), phi=int(row.phi), chi=int(row.chi), phi_p=int(row.phi_p),
                       chi_p=int(row.chi_p), prob=float(row.prob), q=float(row.q),
                       delta_eps=float(row.delta_eps), delta_I=float(row.delta_I),
                       reverse_id=int(row.reverse_id))

    @property
    def prob(self) -> np.ndarray:
        return self.frame["prob"].to_numpy()

    @property
    def twin_prob(self) -> np.ndarray:
        """Probability of each row's reverse twin."""
        return self.prob[self.frame["reverse_id"].to_numpy()]

    def column(self, name: str) -> np.ndarray:
        return self.frame[name].to_numpy()

    def mean(self, name: str, floor: float = PROB_FLOOR) -> float:
        """Probability-weighted mean over histories with prob > floor."""
        prob = self.prob
        keep = prob > floor
        if not keep.any():
            return 0.0
        return math.fsum(prob[keep] * self.column(name)[keep])

    def to_csv(self, path: Optional[Union[str, Path]] = None) -> str:
        """Render the history columns; with a path, also write them there atomically."""
        text = frame_to_csv(self.frame[HISTORY_COLUMNS])
        if path is not None:
            atomic_write(path, text)
        return text


def _delta_correlation(index_i: np.ndarray, index_f: np.ndarray) -> np.ndarray:
    """I(f*) - I(i), with +inf when I(i) = -inf and -inf when only I(f*) is."""
    with np.errstate(invalid="ignore"):
        delta = index_f - index_i
    delta[np.isneginf(index_i)] = math.inf
    delta[np.isneginf(index_f) & ~np.isneginf(index_i)] = -math.inf
    return delta


def enumerate_histories(rho, u, theta: TimeReversal, m1: Measurement) -> HistoryTable:
    """
    Enumerate every history of the two-point protocol.

    Args:
        rho: Initial joint state
        u: Evolution operator
        theta: Time reversal that defines each history's twin
        m1: Sharp energy measurement used at both ends

    Returns:
        HistoryTable with (d_A d_B)^2 rows
    """
    _require_sharp(m1)
    d_a, d_b = m1.dims
    n = d_a * d_b
    if n > MAX_JOINT_DIM:
        raise DimensionError(f"d_A * d_B = {n} exceeds the enumeration cap {MAX_JOINT_DIM}")
    state, arr = as_array(rho), as_array(u)
    if state.shape != (n, n) or arr.shape != (n, n):
        raise DimensionError(f"state {state.shape} and unitary {arr.shape} do not match dims ({d_a}, {d_b})")

    w = m1.product_basis()
    initial = np.clip(np.real(np.diag(w.conj().T @ state @ w)), 0.0, None)
    transition = np.abs(w.conj().T @ arr @ w) ** 2
    indices = correlation_indices(initial.reshape(d_a, d_b))
    perm = theta.permutation

    i, f = np.divmod(np.arange(n * n), n)
    phi, chi = np.divmod(i, d_b)
    phi_p, chi_p = np.divmod(f, d_b)
    e_a, e_b = m1.energies_a, m1.energies_b
    total = np.add.outer(e_a, e_b).ravel()
    prob = initial[i] * transition[f, i]

    delta_i = _delta_correlation(indices[i], indices[perm[f]])
    undefined = (prob > PROB_FLOOR) & np.isneginf(indices[i])
    if undefined.any():
        raise UndefinedError(f"{int(undefined.sum())} occupied histories start from an unoccupied outcome")

    frame = pd.DataFrame({
        "phi": phi, "chi": chi, "phi_p": phi_p, "chi_p": chi_p,
        "prob": prob,
        "q": e_a[phi_p] - e_a[phi],
        "delta_eps": total[f] - total[i],
        "delta_I": delta_i,
        "reverse_id": perm[f] * n + perm[i],
    })
    frame.index.name = "id"
    logger.debug("enumerated %d histories, total probability %.15f", len(frame), math.fsum(prob))
    return HistoryTable(frame, (d_a, d_b), initial, indices, perm)


def _twin_aware_extremes(delta_i: np.ndarray, prob: np.ndarray, twin: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    active = (prob > PROB_FLOOR) | (twin > PROB_FLOOR)
    if not active.any():
        return None, None
    values = delta_i[active]
    return float(values.max()), float(values.min())


def group_classes(histories: HistoryTable, bin_tol: float = BIN_TOL) -> List[TransitionClass]:
    """
    Bin histories by (q, delta_eps).

    Points within bin_tol in both coordinates are linked and classes are
    the connected components; a class is labelled by its members' mean.
    delta_I_l / delta_I_u are the max / min correlation change over members
    that are occupied or have an occupied twin.
    """
    q = histories.column("q")
    eps = histories.column("delta_eps")
    delta_i = histories.column("delta_I")
    prob = histories.prob
    twin = histories.twin_prob

    points, inverse = np.unique(np.column_stack([q, eps]), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    pairs = cKDTree(points).query_pairs(r=bin_tol, p=np.inf, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(points), len(points)))
    _, component = connected_components(graph, directed=False)
    labels = component[inverse]

    classes = []
    for label in np.unique(labels):
        members = np.flatnonzero(labels == label)
        upper, lower = _twin_aware_extremes(delta_i[members], prob[members], twin[members])
        classes.append(TransitionClass(
            q=float(np.mean(q[members])),
            delta_eps=float(np.mean(eps[members])),
            prob=math.fsum(prob[members]),
            delta_I_l=upper,
            delta_I_u=lower,
            member_ids=[int(m) for m in members],
        ))
    classes.sort(key=lambda c: (c.q, c.delta_eps))
    logger.debug("grouped %d histories into %d classes", len(histories), len(classes))
    return classes


def reverse_class(classes: Sequence[TransitionClass], q: float, delta_eps: float,
                  bin_tol: float = BIN_TOL) -> TransitionClass:
    """The class at (-q, -delta_eps), or an empty class with prob 0."""
    for cls in classes:
        if abs(cls.q + q) <= bin_tol and abs(cls.delta_eps + delta_eps) <= bin_tol:
            return cls
    return TransitionClass(q=-q, delta_eps=-delta_eps, prob=0.0)


def class_table(classes: Sequence[TransitionClass]) -> pd.DataFrame:
    """Flat table of classes for classes.csv."""
    nan = float("nan")
    return pd.DataFrame({
        "q": [c.q for c in classes],
        "delta_eps": [c.delta_eps for c in classes],
        "prob": [c.prob for c in classes],
        "delta_I_l": [nan if c.delta_I_l is None else c.delta_I_l for c in classes],
        "delta_I_u": [nan if c.delta_I_u is None else c.delta_I_u for c in classes],
        "members": [len(c.member_ids) for c in classes],
    }, columns=["q", "delta_eps", "prob", "delta_I_l", "delta_I_u", "members"])


def final_outcome_distribution(histories: HistoryTable) -> np.ndarray:
    """Probability of each final product outcome phi' * d_B + chi'."""
    d_a, d_b = histories.dims
    final = histories.column("phi_p") * d_b + histories.column("chi_p")
    return np.bincount(final, weights=histories.prob, minlength=d_a * d_b)

