"""
Experiment runner for XFT Lab.
Parses YAML experiment configs and drives the pipeline
state -> dynamics -> histories -> checks -> output.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml
from pydantic import TypeAdapter, ValidationError

from app import __version__
from app.config import DEFAULT_OUTPUT_DIR
from app.dynamics import (
    TimeReversal,
    check_energy_conservation,
    check_trs,
    evolution_operator,
    evolve,
    make_time_reversal,
    random_trs_hamiltonian,
    transition_symmetry_deviation,
)
from app.errors import ConfigValidationError, NotProductStateError, ParseError, StageError
from app.export import atomic_write, frame_to_csv
from app.histories import HistoryTable, Measurement, class_table, enumerate_histories, group_classes, sharp_energy_measurement
from app.linalg import DensityMatrix, as_array, partial_trace
from app.models import (
    ExperimentConfig,
    InteractionSpec,
    JointStateSpec,
    MaxWorkReport,
    RunMeans,
    RunReport,
    TheoremReport,
    ThermalSpec,
    TransitionClass,
)
from app.thermal import build_joint_state, verify_thermal_marginals
from app import theorems

logger = logging.getLogger(__name__)

SWEEP_AXES = {
    "lambda": ("state", "lambda"),
    "beta_A": ("thermal", "beta_a"),
    "beta_B": ("thermal", "beta_b"),
    "strength": ("dynamics", "strength"),
    "t": ("dynamics", "t"),
}
# axes whose points share the base seed so consecutive runs differ only in the swept value
HELD_SEED_AXES = ("strength", "t")
CORRELATED_FAMILIES = ("classical_coupled", "interpolated", "coherent_shell")


# --- Config parsing --- #

def _key_lines(node, path: Tuple = ()) -> Dict[Tuple, int]:
    """Map every mapping key path of a composed YAML node to its 1-based line."""
    lines = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key_path = path + (key_node.value,)
            lines[key_path] = key_node.start_mark.line + 1
            lines.update(_key_lines(value_node, key_path))
    elif isinstance(node, yaml.SequenceNode):
        for index, item in enumerate(node.value):
            lines.update(_key_lines(item, path + (index,)))
    return lines


def validate_config(data, lines: Optional[Dict[Tuple, int]] = None) -> ExperimentConfig:
    """
    Validate a config mapping.

    Raises:
        ParseError: unknown key
        ConfigValidationError: a value fails validation
    """
    lines = lines or {}
    if not isinstance(data, dict):
        raise ParseError("experiment config must be a mapping at the top level", line=1)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        errors = exc.errors()
        for err in errors:
            if err["type"] == "extra_forbidden":
                loc = tuple(err["loc"])
                raise ParseError(f"unknown key '{loc[-1]}'", key=".".join(map(str, loc)), line=lines.get(loc)) from None
        first = errors[0]
        raise ConfigValidationError(".".join(map(str, first["loc"])) or "config", first["msg"]) from None


def parse_config(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate a YAML experiment config.

    Args:
        path: Config file

    Returns:
        ExperimentConfig with every default filled
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
        lines = _key_lines(yaml.compose(text, Loader=yaml.SafeLoader))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(f"malformed YAML in {path}: {getattr(exc, 'problem', exc)}",
                         line=mark.line + 1 if mark else None) from None
    config = validate_config(data, lines)
    logger.info("Loaded config %s (family=%s, mode=%s)", path, config.state.family, config.dynamics.mode)
    return config


# --- Pipeline --- #

@contextmanager
def stage(name: str):
    """Re-raise any failure inside the block as a StageError naming the stage."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class RunContext:
    """Everything one run produces before it is reported."""

    config: ExperimentConfig
    specs: Tuple[ThermalSpec, ThermalSpec]
    rho: DensityMatrix
    theta: TimeReversal = None
    u: object = None
    m1: Measurement = None
    histories: HistoryTable = None
    classes: List[TransitionClass] = field(default_factory=list)

    @property
    def betas(self) -> Tuple[float, float]:
        return self.specs[0].beta, self.specs[1].beta


def build_specs(config: ExperimentConfig) -> Tuple[ThermalSpec, ThermalSpec]:
    return (
        ThermalSpec(hamiltonian=config.system.a, beta=config.thermal.beta_a),
        ThermalSpec(hamiltonian=config.system.b, beta=config.thermal.beta_b),
    )


def execute(config: ExperimentConfig) -> RunContext:
    """Run every stage up to the class table."""
    with stage("state"):
        specs = build_specs(config)
        joint = JointStateSpec(family=config.state.family, lambda_=config.state.lambda_,
                               specs=specs, correlated=config.state.correlated)
        rho = build_joint_state(joint)
    ctx = RunContext(config=config, specs=specs, rho=rho)
    logger.info("Built %s state, dims %s", config.state.family, (specs[0].dim, specs[1].dim))

    with stage("dynamics"):
        h_a, h_b = specs[0].hamiltonian, specs[1].hamiltonian
        ctx.theta = make_time_reversal(config.dynamics.theta, h_a, h_b)
        spec = InteractionSpec(mode=config.dynamics.mode, coupling=config.dynamics.coupling,
                               t=config.dynamics.t, strength=config.dynamics.strength,
                               seed=config.seed, mean_tol=config.dynamics.mean_tol)
        h_int = random_trs_hamiltonian(spec, h_a, h_b, ctx.theta, rho)
        ctx.u = evolution_operator(h_a, h_b, h_int, spec.t)

    with stage("histories"):
        ctx.m1 = sharp_energy_measurement(h_a, h_b)
        ctx.histories = enumerate_histories(rho, ctx.u, ctx.theta, ctx.m1)
        ctx.classes = group_classes(ctx.histories, config.bin_tol)
    logger.info("Enumerated %d histories in %d classes", len(ctx.histories), len(ctx.classes))
    return ctx


def _check(ctx: RunContext, name: str, tol: float) -> TheoremReport:
    beta_a, beta_b = ctx.betas
    if name == "per_history_ratio":
        return theorems.per_history_ratio_check(ctx.histories, beta_a, beta_b, tol)
    if name == "class_bounds":
        return theorems.class_bounds_check(ctx.classes, beta_a, beta_b, tol, ctx.config.bin_tol)
    if name == "integral_equality":
        return theorems.integral_equality_check(ctx.histories, beta_a, beta_b, tol)
    if name == "averaged_inequality":
        return theorems.averaged_inequality_check(ctx.histories, beta_a, beta_b, tol)
    if name == "baseline_xft":
        try:
            return theorems.baseline_xft_check(ctx.histories, ctx.rho, ctx.specs, tol, ctx.config.bin_tol)
        except NotProductStateError as exc:
            return TheoremReport(name=name, passed=False, skipped=True, tolerance=tol,
                                 note=f"NotProductStateError: {exc}")
    if name == "clausius_comparison":
        return theorems.clausius_comparison(ctx.rho, ctx.u, ctx.specs, ctx.histories, tol)
    if name == "mutual_information_identities":
        return theorems.mutual_information_identities(ctx.rho, ctx.m1, tol)
    if name == "quantum_mutual_information_comparison":
        dims = (ctx.specs[0].dim, ctx.specs[1].dim)
        return theorems.quantum_mutual_information_comparison(ctx.rho, ctx.u, dims, ctx.histories, ctx.m1)
    if name == "povm_pairing":
        return theorems.povm_pairing_check(ctx.m1, ctx.theta, ctx.u, ctx.rho, tol)
    raise ValueError(f"unknown check '{name}'")


def run_checks(ctx: RunContext) -> List[TheoremReport]:
    reports = []
    with stage("checks"):
        for check in ctx.config.checks:
            report = _check(ctx, check.name, check.tolerance)
            level = logging.INFO if report.passed or report.skipped or report.conditional else logging.WARNING
            logger.log(level, "Check %s: pass=%s max_violation=%.3e%s", report.name, report.passed,
                       report.max_violation, " (skipped)" if report.skipped else "")
            reports.append(report)
    return reports


def build_report(ctx: RunContext, reports: List[TheoremReport], started: float) -> RunReport:
    h_a, h_b = ctx.specs[0].hamiltonian, ctx.specs[1].hamiltonian
    return RunReport(
        config=ctx.config.model_dump(mode="json", by_alias=True),
        marginals=verify_thermal_marginals(ctx.rho, ctx.specs),
        energy_conservation=check_energy_conservation(ctx.rho, ctx.u, h_a, h_b),
        trs_deviation=check_trs(ctx.u, ctx.theta),
        transition_symmetry=transition_symmetry_deviation(ctx.u, ctx.theta),
        classes=ctx.classes,
        theorems=reports,
        passed=all(not r.fails_run for r in reports),
        wall_time=time.perf_counter() - started,
        version=__version__,
    )


def resolve_output_dir(config: ExperimentConfig, out: Optional[Union[str, Path]] = None) -> Path:
    return Path(out or config.output.directory or DEFAULT_OUTPUT_DIR)


def write_outputs(ctx: RunContext, report: RunReport, out_dir: Path, formats: Sequence[str],
                  tables: bool = True) -> List[Path]:
    """Write report.json and the csv tables; on failure nothing written here is left behind."""
    written: List[Path] = []
    try:
        with stage("output"):
            if "json" in formats:
                written.append(atomic_write(out_dir / "report.json", report.model_dump_json(by_alias=True, indent=2)))
            if tables and "csv" in formats:
                ctx.histories.to_csv(out_dir / "histories.csv")
                written.append(out_dir / "histories.csv")
                written.append(atomic_write(out_dir / "classes.csv", frame_to_csv(class_table(ctx.classes))))
    except StageError:
        for path in written:
            path.unlink(missing_ok=True)
        raise
    return written


def run(config: ExperimentConfig, out: Optional[Union[str, Path]] = None,
        formats: Optional[Sequence[str]] = None, tables: bool = True) -> RunReport:
    """
    Execute one experiment and write its outputs.

    Args:
        config: Validated experiment config
        out: Output directory (config, then XFT_OUTPUT_DIR, otherwise)
        formats: Subset of {"json", "csv"}; defaults to config.output.formats
        tables: False for verify mode (report only)

    Returns:
        RunReport
    """
    started = time.perf_counter()
    ctx = execute(config)
    reports = run_checks(ctx)
    report = build_report(ctx, reports, started)
    out_dir = resolve_output_dir(config, out)
    write_outputs(ctx, report, out_dir, formats or config.output.formats, tables)
    logger.info("Run finished: passed=%s, outputs in %s", report.passed, out_dir)
    return report


# --- Sweeps --- #

@dataclass
class SweepResult:
    axis: str
    reports: List[RunReport]
    summary: pd.DataFrame
    max_work: List[MaxWorkReport]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def with_axis(config: ExperimentConfig, axis: str, value: float, seed: int) -> ExperimentConfig:
    """Copy of config with the swept parameter and seed replaced."""
    if axis not in SWEEP_AXES:
        raise ConfigValidationError("axis", f"unknown sweep axis '{axis}' (expected one of {sorted(SWEEP_AXES)})")
    if axis == "lambda" and config.state.family not in CORRELATED_FAMILIES:
        raise ConfigValidationError("axis", f"lambda has no effect on the '{config.state.family}' family")
    data = config.model_dump(by_alias=True)
    section, key = SWEEP_AXES[axis]
    data[section][key] = value
    data["seed"] = seed
    return validate_config(data)


def _signature(config: ExperimentConfig, axis: str) -> Dict[str, str]:
    section, key = SWEEP_AXES[axis]
    data = config.model_dump(mode="json", by_alias=True)
    data[section].pop(key)
    data.pop("output")
    flat = pd.json_normalize(data, sep=".").iloc[0].to_dict()
    return {k: repr(v) for k, v in sorted(flat.items())}


def run_means(ctx: RunContext, axis: str, value: float) -> RunMeans:
    """Averages that feed the max-work report."""
    dims = (ctx.specs[0].dim, ctx.specs[1].dim)
    evolved = evolve(ctx.u, ctx.rho)
    reduced = as_array(partial_trace(evolved, dims, keep="A"))
    energy_a = float(np.real(np.trace(ctx.specs[0].hamiltonian.data @ reduced)))
    return RunMeans(axis=axis, value=value, energy_a=energy_a,
                    mean_q=ctx.histories.mean("q"),
                    mean_delta_eps=ctx.histories.mean("delta_eps"),
                    mean_delta_I=ctx.histories.mean("delta_I"),
                    signature=_signature(ctx.config, axis))


def _sweep_point(config: ExperimentConfig, axis: str, index: int, value: float, out_dir: Path,
                 formats: Sequence[str]) -> Tuple[RunReport, RunContext]:
    started = time.perf_counter()
    ctx = execute(config)
    reports = run_checks(ctx)
    report = build_report(ctx, reports, started)
    write_outputs(ctx, report, out_dir / f"{axis}_{index:03d}", formats)
    logger.info("Sweep point %s=%g done (passed=%s)", axis, value, report.passed)
    return report, ctx


def sweep(config: ExperimentConfig, axis: str, values: Sequence[float],
          out: Optional[Union[str, Path]] = None, formats: Optional[Sequence[str]] = None,
          workers: int = 1) -> SweepResult:
    """
    One run per value of the swept axis plus summary.csv, and max_work.json
    for consecutive pairs when the axis is strength or t.
    """
    if not values:
        raise ConfigValidationError("values", "a sweep needs at least one value")
    out_dir = resolve_output_dir(config, out)
    formats = formats or config.output.formats
    held = axis in HELD_SEED_AXES
    points = [with_axis(config, axis, float(v), config.seed if held else config.seed + k)
              for k, v in enumerate(values)]

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(_sweep_point, cfg, axis, k, float(v), out_dir, formats)
                   for k, (cfg, v) in enumerate(zip(points, values))]
        results = [f.result() for f in futures]

    reports = [r for r, _ in results]
    means = [run_means(ctx, axis, float(v)) for (_, ctx), v in zip(results, values)]
    rows = []
    for report, (_, ctx), m in zip(reports, results, means):
        integral = next((t.lhs for t in report.theorems if t.name == "integral_equality"), None)
        rows.append({
            axis: m.value,
            "mean_q": m.mean_q,
            "mean_delta_eps": m.mean_delta_eps,
            "mean_delta_I": m.mean_delta_I,
            "integral_lhs": np.nan if integral is None else integral,
            "bound_width": theorems.bounded_xft_width(ctx.classes),
            "passed": report.passed,
        })
    summary = pd.DataFrame(rows)

    max_work = []
    if axis in HELD_SEED_AXES:
        specs = results[0][1].specs
        max_work = [theorems.max_work_report(a, b, specs) for a, b in zip(means, means[1:])]

    with stage("output"):
        atomic_write(out_dir / "summary.csv", frame_to_csv(summary))
        if max_work:
            payload = TypeAdapter(List[MaxWorkReport]).dump_json(max_work, indent=2).decode()
            atomic_write(out_dir / "max_work.json", payload)
    return SweepResult(axis=axis, reports=reports, summary=summary, max_work=max_work)
