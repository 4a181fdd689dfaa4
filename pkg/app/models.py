"""
Data models for XFT Lab.
Defines the specs, records and reports that flow between modules,
and the schema of experiment configuration files.
"""
import math
import re
from functools import cached_property
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.config import BIN_TOL, CHECK_TOLERANCES, EXPONENT_CAP
from app.errors import RangeError
from app.linalg import HermitianOperator, eigh


class ReportModel(BaseModel):
    """Base for everything that ends up in report.json."""

    model_config = ConfigDict(populate_by_name=True, ser_json_inf_nan="strings")


# --- Physical specs --- #

class ThermalSpec(BaseModel):
    """
    A subsystem Hamiltonian at inverse temperature beta.
    The partition function and Gibbs pmf are derived from the spectrum.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    hamiltonian: HermitianOperator
    beta: float = Field(ge=0.0)

    @field_validator("hamiltonian", mode="before")
    @classmethod
    def _coerce_hamiltonian(cls, value):
        if isinstance(value, HermitianOperator):
            return value
        arr = np.asarray(value)
        if arr.ndim == 1:
            arr = np.diag(arr)
        return HermitianOperator(arr)

    @field_validator("beta")
    @classmethod
    def _finite_beta(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("beta must be finite")
        return value

    @property
    def dim(self) -> int:
        return self.hamiltonian.dim

    @cached_property
    def spectrum(self) -> Tuple[np.ndarray, np.ndarray]:
        return eigh(self.hamiltonian)

    @property
    def energies(self) -> np.ndarray:
        """Eigenvalues in ascending order (the measurement basis order)."""
        return self.spectrum[0]

    @property
    def basis(self) -> np.ndarray:
        """Energy eigenvectors as columns."""
        return self.spectrum[1]

    @cached_property
    def gibbs_weights(self) -> Tuple[np.ndarray, float]:
        energies = self.energies
        spread = float(energies[-1] - energies[0])
        if self.beta * spread > EXPONENT_CAP:
            raise RangeError(
                f"beta * spread(E) = {self.beta * spread:.1f} exceeds {EXPONENT_CAP}; "
                "shift or rescale the spectrum"
            )
        # shifted weights lie in (0, 1]; the shift cancels in the normalized pmf
        weights = np.exp(-self.beta * (energies - energies[0]))
        return weights, float(energies[0])

    @property
    def pmf(self) -> np.ndarray:
        """Gibbs probabilities over the energy eigenbasis."""
        weights, _ = self.gibbs_weights
        return weights / weights.sum()

    @property
    def partition_fn(self) -> float:
        weights, ground = self.gibbs_weights
        z = weights.sum() * math.exp(-self.beta * ground) if self.beta * ground > -EXPONENT_CAP else math.inf
        if not math.isfinite(z):
            raise RangeError(f"partition function overflows for beta={self.beta}")
        return float(z)

    @property
    def temperature(self) -> float:
        return math.inf if self.beta == 0 else 1.0 / self.beta


StateFamily = Literal["product", "classical_coupled", "thermofield_pure", "interpolated", "coherent_shell"]
CorrelatedFamily = Literal["thermofield_pure", "classical_coupled", "coherent_shell"]


class JointStateSpec(BaseModel):
    """Which correlated state with thermal marginals to build."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    family: StateFamily = "product"
    lambda_: float = Field(default=0.0, ge=0.0, le=1.0, alias="lambda")
    specs: Tuple[ThermalSpec, ThermalSpec]
    correlated: CorrelatedFamily = "thermofield_pure"


class InteractionSpec(BaseModel):
    """Parameters of the random time-reversal-invariant interaction."""

    model_config = ConfigDict(frozen=True)

    mode: Literal["strict", "mean_conserving"] = "strict"
    coupling: Literal["random", "exchange"] = "random"
    t: float = 1.0
    strength: float = Field(default=1.0, ge=0.0)
    seed: int = Field(default=0, ge=0, lt=2**64)
    mean_tol: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def _exchange_is_strict(self):
        if self.coupling == "exchange" and self.mode != "strict":
            raise ValueError("exchange coupling is only defined for strict mode")
        return self


# --- Records --- #

class MarginalReport(ReportModel):
    deviation_a: float
    deviation_b: float
    tolerance: float
    passed: bool


class History(BaseModel):
    """One two-point measurement record (phi, chi) -> (phi', chi')."""

    id: int
    phi: int
    chi: int
    phi_p: int
    chi_p: int
    prob: float
    q: float
    delta_eps: float
    delta_I: float
    reverse_id: int

    @property
    def initial(self) -> Tuple[int, int]:
        return self.phi, self.chi

    @property
    def final(self) -> Tuple[int, int]:
        return self.phi_p, self.chi_p


class TransitionClass(ReportModel):
    """All histories sharing (q, delta_eps), with the extremal correlation changes."""

    q: float
    delta_eps: float
    prob: float
    delta_I_l: Optional[float] = None
    delta_I_u: Optional[float] = None
    member_ids: List[int] = Field(default_factory=list)

    @property
    def bound_width(self) -> Optional[float]:
        if self.delta_I_l is None or self.delta_I_u is None:
            return None
        return self.delta_I_l - self.delta_I_u


class TheoremReport(ReportModel):
    name: str
    passed: bool = Field(alias="pass")
    lhs: Optional[float] = None
    rhs: Optional[float] = None
    lower_bound: Optional[float] = None
    upper_bound: Optional[float] = None
    max_violation: float = 0.0
    skipped_pairs: int = 0
    tolerance: float
    skipped: bool = False
    conditional: bool = False
    note: str = ""
    details: Dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_violation(cls, name: str, max_violation: float, tolerance: float, **kwargs) -> "TheoremReport":
        """Build a report whose pass flag follows max_violation <= tolerance."""
        return cls(name=name, passed=bool(max_violation <= tolerance), max_violation=max_violation,
                   tolerance=tolerance, **kwargs)

    @property
    def fails_run(self) -> bool:
        return not self.passed and not self.skipped and not self.conditional


class ValidationReport(ReportModel):
    valid_states: bool
    closed: bool
    failures: List[str] = Field(default_factory=list)
    max_closure_deviation: float = 0.0
    pairing_identity_deviation: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.valid_states and self.closed


class RunMeans(ReportModel):
    """Per-run averages that feed the finite-difference max-work report."""

    axis: str
    value: float
    energy_a: float
    mean_q: float
    mean_delta_eps: float
    mean_delta_I: float
    signature: Dict[str, str] = Field(default_factory=dict)


class MaxWorkReport(ReportModel):
    axis: str
    step: float
    T_A: float
    T_B: float
    dU_A: float
    dq_mean: float
    dS_A: float
    dI_mean: float
    work_bound: float


# --- Experiment configuration --- #

CheckName = Literal[
    "per_history_ratio",
    "class_bounds",
    "integral_equality",
    "averaged_inequality",
    "baseline_xft",
    "clausius_comparison",
    "mutual_information_identities",
    "quantum_mutual_information_comparison",
    "povm_pairing",
]

SPECTRUM_PRESETS = {
    "qubit": [0.0, 1.0],
    "qutrit": [0.0, 1.0, 2.0],
}
_LADDER = re.compile(r"^ladder\(\s*(\d+)\s*,\s*([-+0-9.eE]+)\s*\)$")


def resolve_spectrum(value: Union[str, List[float]]) -> List[float]:
    """Turn a preset name or a list into a list of energies."""
    if isinstance(value, str):
        name = value.strip()
        if name in SPECTRUM_PRESETS:
            return list(SPECTRUM_PRESETS[name])
        match = _LADDER.match(name)
        if match:
            d, gap = int(match.group(1)), float(match.group(2))
            if d < 1:
                raise ValueError("ladder needs at least one level")
            return [k * gap for k in range(d)]
        raise ValueError(f"unknown spectrum preset '{value}'")
    return [float(e) for e in value]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SystemConfig(StrictModel):
    a: List[float]
    b: List[float]

    @field_validator("a", "b", mode="before")
    @classmethod
    def _resolve(cls, value):
        return resolve_spectrum(value)

    @field_validator("a", "b")
    @classmethod
    def _finite(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("spectrum must not be empty")
        if not all(math.isfinite(e) for e in value):
            raise ValueError("spectrum entries must be finite")
        return value


class ThermalConfig(StrictModel):
    beta_a: float = Field(ge=0.0, allow_inf_nan=False)
    beta_b: float = Field(ge=0.0, allow_inf_nan=False)


class StateConfig(StrictModel):
    family: StateFamily = "product"
    lambda_: float = Field(default=0.0, ge=0.0, le=1.0, alias="lambda")
    correlated: CorrelatedFamily = "thermofield_pure"


class DynamicsConfig(StrictModel):
    mode: Literal["strict", "mean_conserving"] = "strict"
    coupling: Literal["random", "exchange"] = "random"
    t: float = Field(default=1.0, allow_inf_nan=False)
    strength: float = Field(default=1.0, ge=0.0, allow_inf_nan=False)
    mean_tol: Optional[float] = Field(default=None, gt=0.0)
    theta: Optional[List[int]] = None

    @model_validator(mode="after")
    def _exchange_is_strict(self):
        if self.coupling == "exchange" and self.mode != "strict":
            raise ValueError("exchange coupling is only defined for strict mode")
        return self


class CheckSpec(StrictModel):
    name: CheckName
    tolerance: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="before")
    @classmethod
    def _from_name(cls, value):
        if isinstance(value, str):
            return {"name": value}
        return value

    @model_validator(mode="after")
    def _default_tolerance(self):
        if self.tolerance is None:
            self.tolerance = CHECK_TOLERANCES[self.name]
        return self


def _all_checks() -> List[CheckSpec]:
    return [CheckSpec(name=name) for name in CHECK_TOLERANCES]


class OutputConfig(StrictModel):
    directory: Optional[str] = None
    formats: List[Literal["json", "csv"]] = Field(default_factory=lambda: ["json", "csv"])


class ExperimentConfig(StrictModel):
    system: SystemConfig
    thermal: ThermalConfig
    state: StateConfig = Field(default_factory=StateConfig)
    dynamics: DynamicsConfig = Field(default_factory=DynamicsConfig)
    checks: List[CheckSpec] = Field(default_factory=_all_checks)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seed: int = Field(default=0, ge=0, lt=2**64)
    bin_tol: float = Field(default=BIN_TOL, gt=0.0)

    def tolerance(self, check: str) -> float:
        for spec in self.checks:
            if spec.name == check:
                return spec.tolerance
        return CHECK_TOLERANCES[check]


class RunReport(ReportModel):
    config: dict
    marginals: MarginalReport
    energy_conservation: float
    trs_deviation: float
    transition_symmetry: float
    classes: List[TransitionClass]
    theorems: List[TheoremReport]
    passed: bool
    wall_time: float
    version: str
