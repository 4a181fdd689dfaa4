"""
End-to-end acceptance suite.
Randomized experiments over every state family, both dynamics modes and
d in {2, 3, 4}, plus the checked-in fixtures.
Run: pytest test_acceptance.py
"""
import math
from pathlib import Path

import pytest

from app import theorems
from app.dynamics import check_energy_conservation, check_trs, transition_symmetry_deviation
from app.histories import reverse_class
from app.runner import RunContext, execute, parse_config, run_checks, validate_config
from app.thermal import verify_thermal_marginals

PRESETS = Path(__file__).parent / "presets"

LAMBDAS = [0.0, 0.3, 0.7, 1.0]
SEEDS = [0, 1, 2, 3]
# product and thermofield_pure ignore lambda, so they vary over seeds (and with them spectra) instead
LAMBDA_FREE = ["product", "thermofield_pure"]

STRICT_CASES = [(family, 0.0, seed) for family in LAMBDA_FREE for seed in range(4, 14)] + [
    (family, lam, seed)
    for family in ("classical_coupled", "interpolated", "coherent_shell")
    for lam in LAMBDAS
    for seed in SEEDS
]
# passive starting states (product Gibbs, diagonal states that only heat) admit no mean-conserving draw
MEAN_CASES = (
    [("thermofield_pure", 1.0, seed) for seed in range(8)]
    + [("interpolated", lam, seed) for lam in (0.3, 0.5, 0.7, 0.9) for seed in SEEDS]
    + [("classical_coupled", 1.0, seed) for seed in range(10)]
)


def ladder(d: int, gap: float):
    return [k * gap for k in range(d)]


def system(family: str, seed: int):
    """Spectra and inverse temperatures for one grid point."""
    slot = seed % 4
    s = 0.5 + 0.25 * slot
    if family in ("thermofield_pure", "interpolated"):
        d = (2, 3, 4, 3)[slot]
        if d == 2:
            # equal temperatures keep the E = 1 shell degenerate
            return ladder(2, 1.0), ladder(2, 1.0), s, s
        # beta_A * E_A == beta_B * E_B level by level, so the Gibbs pmfs pair up
        return ladder(d, 1.0), ladder(d, 2.0), 2 * s, s
    if family == "coherent_shell":
        d = (2, 3, 2, 3)[slot]
        return ladder(d, 1.0), ladder(d, 1.0), 2 * s, s
    d_a, d_b = [(2, 3), (3, 2), (3, 4), (4, 3), (2, 2), (3, 3), (4, 2), (2, 4)][seed % 8]
    return ladder(d_a, 1.0), ladder(d_b, 1.0), 2 * s, s


def mean_system(family: str, seed: int):
    """Non-passive starting points: thermofield coherences or a comonotone population inversion."""
    if family == "classical_coupled":
        return ladder(3, 1.0), ladder(3, 1.0), 1.5, 0.5
    return system(family, seed)


def experiment(family: str, lam: float, seed: int, mode: str = "strict") -> RunContext:
    if mode == "strict":
        a, b, beta_a, beta_b = system(family, seed)
        dynamics = {"mode": "strict", "coupling": "random", "strength": 1.0, "t": 1.0}
    else:
        a, b, beta_a, beta_b = mean_system(family, seed)
        dynamics = {"mode": "mean_conserving", "coupling": "random", "strength": 0.3, "t": 1.0}
    return execute(validate_config({
        "system": {"a": a, "b": b},
        "thermal": {"beta_a": beta_a, "beta_b": beta_b},
        "state": {"family": family, "lambda": lam},
        "dynamics": dynamics,
        "seed": seed,
    }))


def run_key(family: str, lam: float, seed: int, mode: str):
    """What actually determines a run; lambda drops out for the lambda-free families."""
    a, b, beta_a, beta_b = system(family, seed) if mode == "strict" else mean_system(family, seed)
    effective = None if family in LAMBDA_FREE else lam
    return mode, family, effective, tuple(a), tuple(b), beta_a, beta_b, seed


def product_populations(family: str, lam: float) -> bool:
    """Dephased initial populations factorize."""
    return family in ("product", "coherent_shell") or (family in ("classical_coupled", "interpolated") and lam == 0.0)


def diagonal_state(family: str, lam: float) -> bool:
    return family in ("product", "classical_coupled") or (family in ("interpolated", "coherent_shell") and lam == 0.0)


def assert_generalized_theorems(ctx: RunContext):
    reports = {r.name: r for r in run_checks(ctx)}
    for name, report in reports.items():
        assert not report.fails_run, f"{name}: {report.max_violation:.3e} {report.note}"

    assert reports["per_history_ratio"].passed
    assert reports["per_history_ratio"].max_violation <= 1e-9
    assert reports["class_bounds"].max_violation <= 1e-9
    assert reports["mutual_information_identities"].max_violation <= 1e-9

    full = theorems.has_full_support(ctx.histories)
    if full:
        assert abs(reports["integral_equality"].lhs - 1.0) <= 1e-9
        assert reports["averaged_inequality"].lhs >= -1e-10
    else:
        assert reports["integral_equality"].conditional

    assert transition_symmetry_deviation(ctx.u, ctx.theta) <= 1e-10
    assert check_trs(ctx.u, ctx.theta) <= 1e-10
    assert verify_thermal_marginals(ctx.rho, ctx.specs).passed
    return reports


@pytest.mark.parametrize("family, lam, seed", STRICT_CASES)
def test_strict_grid(family, lam, seed):
    ctx = experiment(family, lam, seed)
    reports = assert_generalized_theorems(ctx)

    h_a, h_b = ctx.specs[0].hamiltonian, ctx.specs[1].hamiltonian
    assert check_energy_conservation(ctx.rho, ctx.u, h_a, h_b) <= 1e-9
    assert abs(reports["averaged_inequality"].details["mean_delta_eps"]) <= 1e-9
    assert "corollary" in reports["averaged_inequality"].details

    if product_populations(family, lam):
        assert theorems.bounded_xft_width(ctx.classes) <= 1e-10
    if diagonal_state(family, lam):
        assert reports["clausius_comparison"].details["disturbance_gap"] <= 1e-10


@pytest.mark.parametrize("family, lam, seed", MEAN_CASES)
def test_mean_conserving_grid(family, lam, seed):
    ctx = experiment(family, lam, seed, mode="mean_conserving")
    assert_generalized_theorems(ctx)

    h_a, h_b = ctx.specs[0].hamiltonian, ctx.specs[1].hamiltonian
    assert check_energy_conservation(ctx.rho, ctx.u, h_a, h_b) <= 1e-5


def test_grid_size():
    keys = {run_key(*case, "strict") for case in STRICT_CASES}
    keys |= {run_key(*case, "mean_conserving") for case in MEAN_CASES}
    assert len(keys) == len(STRICT_CASES) + len(MEAN_CASES)
    assert len(keys) >= 100

    mean = [key for key in keys if key[0] == "mean_conserving"]
    assert any(beta_a != beta_b for *_, beta_a, beta_b, _ in mean)
    assert {len(key[3]) for key in mean} >= {2, 3, 4}
    assert {key[1] for key in mean} == {"thermofield_pure", "interpolated", "classical_coupled"}


# --- Fixtures --- #

def preset(name: str) -> RunContext:
    return execute(parse_config(PRESETS / f"{name}.yaml"))


def test_baseline_reproduction():
    ctx = preset("jw-baseline")
    report = theorems.baseline_xft_check(ctx.histories, ctx.rho, ctx.specs)
    assert report.passed
    assert report.details["ratio[q=+1]"] == pytest.approx(2.718281828, rel=1e-9)


def test_arrow_dissolution():
    ctx = preset("arrow-dissolution")
    reports = assert_generalized_theorems(ctx)
    assert reports["integral_equality"].passed
    assert reports["averaged_inequality"].passed

    beta_a, beta_b = ctx.betas
    dbeta = beta_a - beta_b
    violating = []
    for cls in ctx.classes:
        if cls.q >= 0 or cls.prob <= 1e-14:
            continue
        twin = reverse_class(ctx.classes, cls.q, cls.delta_eps)
        if cls.prob > math.exp(dbeta * cls.q) * twin.prob:
            violating.append(cls)
    assert violating
    assert reports["averaged_inequality"].details["mean_q"] * dbeta < 0


def test_coherent_fixture_shows_disturbance_gap():
    ctx = preset("coherent-gap")
    report = theorems.clausius_comparison(ctx.rho, ctx.u, ctx.specs, ctx.histories)
    assert report.details["disturbance_gap"] > 1e-3
    assert report.conditional


def test_thermofield_qubits_mutual_information():
    ctx = preset("tfd-pure")
    report = theorems.mutual_information_identities(ctx.rho, ctx.m1)
    assert report.passed
    assert report.lhs == pytest.approx(0.5828, abs=1e-3)


def test_histories_are_deterministic():
    first = preset("lambda-sweep").histories.to_csv()
    second = preset("lambda-sweep").histories.to_csv()
    assert first == second
    # different seed, different interaction
    config = parse_config(PRESETS / "lambda-sweep.yaml").model_copy(update={"seed": 12})
    assert execute(config).histories.to_csv() != first
