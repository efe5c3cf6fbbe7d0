import csv
import math

import numpy as np
import pytest
from scipy import integrate, stats

from pearson_stein import gamma_chaos as gc
from pearson_stein import pearson_family as pf
from pearson_stein import stein
from pearson_stein.errors import ConfigurationError, PoleError, UnsupportedError
from pearson_stein.stein import (
    SteinProblem,
    acceptance_targets,
    default_thresholds,
    domination_sweep,
    domination_sweep_V,
    envelope_U,
    envelope_V,
    ode_residual,
    solve,
    sweep_grid,
)

TARGETS = acceptance_targets()
IDS = [stein.target_key(t) for t in TARGETS]


def _cases():
    for spec, key in zip(TARGETS, IDS):
        for branch, x in default_thresholds(spec).items():
            if math.isfinite(x):
                yield pytest.param(spec, branch, x, id=f"{key}-{branch}")


def test_problem_validation():
    n = pf.normal()
    with pytest.raises(ConfigurationError):
        SteinProblem(pf.gamma(7.0), 0, 1.0, branch="below")
    with pytest.raises(ConfigurationError):
        SteinProblem(n, -1, 0.0)
    gen = pf.GeneralDiffusionSpec.from_pearson(n)
    with pytest.raises(UnsupportedError):
        SteinProblem(gen, 1, 0.0)
    assert SteinProblem(pf.beta(5.0, 10.0), 0, 1.0).branch == "above"


def test_normal_oracle_value():
    # g(1) = -(1 / (b p(1))) int_1^inf (1{w > .5} w - p(.5)) phi(w) dw
    sol = solve(SteinProblem(pf.normal(), 0, 0.5))
    phi = stats.norm.pdf
    tail, _ = integrate.quad(lambda w: (w - phi(0.5)) * phi(w), 1.0, np.inf, epsabs=1e-14)
    expected = -tail / phi(1.0)
    assert sol.g(np.array([1.0]))[0] == pytest.approx(expected, rel=1e-12, abs=1e-15)
    assert sol.mean_h == pytest.approx(phi(0.5), rel=1e-14)


def test_exterior_closed_form_below_branch():
    # outside the support 2 a g = h - E h with E h = 0, i.e. g = h / (m - y)
    spec = pf.gamma(7.0)
    sol = solve(SteinProblem(spec, 1, spec.lo))
    y = np.linspace(-5, -0.1, 9)
    h = stein.rho_symbolic(spec, 2)(y)
    np.testing.assert_allclose(sol.g(y), h / (spec.m - y), rtol=1e-14)
    # and the solution vanishes inside the support
    assert np.all(sol.g(np.array([0.5, 3.0, 20.0])) == 0.0)


@pytest.mark.parametrize("spec,branch,x", list(_cases()))
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_ode_residual(spec, branch, x, k):
    sol = solve(SteinProblem(spec, k, x))
    grid = sweep_grid(spec)
    grid = grid[stein._valid_points(spec, sol, grid)]
    assert ode_residual(sol, grid) <= 1e-7
    out = grid[(grid <= spec.lo) | (grid >= spec.hi)]
    if out.size:
        assert ode_residual(sol, out) <= 1e-9


def test_ode_residual_detects_a_wrong_solution():
    spec = pf.gamma(7.0)
    sol = solve(SteinProblem(spec, 0, 6.0))
    grid = np.linspace(0.5, 20, 200)
    assert ode_residual(sol, grid) <= 1e-10
    sol.mean_h *= 1.001
    assert ode_residual(sol, grid) > 1e-6


@pytest.mark.parametrize("spec", TARGETS, ids=IDS)
@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_interior_forms_agree(spec, k):
    x = default_thresholds(spec)["interior"]
    sol = solve(SteinProblem(spec, k, x))
    lo, hi = stein.ranges_for(spec)["interior"]
    y = np.linspace(lo, hi, 2000)
    # both forms divide by b p and lose digits in the far tails; compare on the bulk
    bp = spec.b(y) * pf.stationary_density(spec, y)
    y = y[bp >= 1e-4 * bp.max()]
    g_lo, _ = sol.evaluate(y, form="lower")
    g_up, _ = sol.evaluate(y, form="upper")
    assert np.max(np.abs(g_lo - g_up) / (1 + np.abs(g_up))) <= 1e-8


@pytest.mark.parametrize("spec", TARGETS, ids=IDS)
@pytest.mark.parametrize("k", [0, 1, 2, 3])
@pytest.mark.parametrize("branch", ["interior", "below", "above"])
def test_domination_U(spec, k, branch):
    rep = domination_sweep(spec, k, branch)
    assert rep.violations == 0


@pytest.mark.parametrize("spec", TARGETS, ids=IDS)
@pytest.mark.parametrize("branch", ["interior", "below", "above"])
def test_domination_V(spec, branch):
    gen = pf.GeneralDiffusionSpec.from_pearson(spec)
    x = default_thresholds(spec)[branch]
    rep = domination_sweep_V(gen, branch, sweep_grid(spec), x=x)
    assert rep.violations == 0


def test_g_prime_matches_finite_differences():
    from pearson_stein.rho_engine import finite_difference

    for spec in TARGETS:
        x = default_thresholds(spec)["interior"]
        sol = solve(SteinProblem(spec, 1, x))
        lo, hi = stein.ranges_for(spec)["interior"]
        for y in np.linspace(lo, hi, 9)[1:-1]:
            if abs(y - x) < 1e-3:
                continue
            fd = finite_difference(lambda w: sol.g(np.array([w]))[0], y, 1)
            exact = sol.dg(np.array([y]))[0]
            assert abs(fd - exact) <= 1e-5 * (1 + abs(exact))


def test_envelope_indicators():
    spec = pf.gamma(7.0)
    y = np.array([0.5, 3.0, 40.0])
    assert np.all(envelope_U(3, 1, 0.0, y, spec) == 0.0)
    assert np.all(envelope_U(4, 1, 0.0, y, spec) == 0.0)
    gen = pf.GeneralDiffusionSpec.from_pearson(spec)
    assert np.all(envelope_V(3, 0.0, y, gen) == 0.0)


def test_envelope_U5_closed_form():
    spec = pf.beta(5.0, 10.0)
    consts = stein.constants_for(spec)
    y = spec.hi + 1.0
    expected = consts["C"] * (1 + abs(y)) / (abs(spec.b(y)) * abs(y - spec.m))
    assert envelope_U(5, 0, spec.hi, y, spec) == pytest.approx(expected, rel=1e-14)


def test_envelope_V1_inside_is_c_of_x():
    spec = pf.normal()
    gen = pf.GeneralDiffusionSpec.from_pearson(spec)
    x = 0.5
    sol = solve(SteinProblem(gen, 0, x))
    v = envelope_V(1, x, np.array([-1.0, 0.0, 2.0]), gen, cx=sol.c_x)
    np.testing.assert_allclose(v, sol.c_x)
    assert sol.c_x > 0


def test_pole_at_root_of_b():
    spec = pf.beta(5.0, 10.0)
    sol = solve(SteinProblem(spec, 0, spec.lo))
    with pytest.raises(PoleError):
        sol.evaluate(np.array([0.0]))


def test_frozen_constants_are_powers_of_two():
    for spec in TARGETS:
        c = stein.constants_for(spec)
        for v in (c["C"], c["C_prime"]):
            assert v > 0 and math.log2(v) == int(math.log2(v))


def test_calibration_on_small_grid():
    spec = pf.gamma(7.0)
    grid = sweep_grid(spec, 100, 25)
    cal = stein.calibrate_constants(spec, k_values=(0, 1), grid=grid)
    frozen = stein.constants_for(spec)
    assert cal["C"] <= frozen["C"] and cal["C_prime"] <= frozen["C_prime"]


def test_domination_csv(tmp_path):
    rep = domination_sweep(pf.gamma(7.0), 0, "below")
    path = tmp_path / "dom.csv"
    rep.to_csv(path)
    with open(path) as fh:
        header = next(csv.reader(fh))
    assert header == ["y", "g", "g_prime", "U_g", "U_gprime", "pass_g", "pass_gprime"]


def test_discrepancy_bound_zero_for_exact_gamma():
    spec = gc.WeightedGammaSpec(8.0, (1.0,), 8.0)
    smp = gc.sample(spec, 20_000, 5)
    res = stein.stein_discrepancy_bound(pf.gamma(8.0), 0, 7.0, smp.F, -smp.gamma_carre,
                                        constants={"C": 2048.0, "C_prime": 1.0})
    assert res.value <= 1e-12 and res.gamma_factor <= 1e-12


def test_discrepancy_bound_zero_for_gaussian_first_chaos():
    # F Gaussian: Gamma(L^-1 F, F) = -1 and b = 1
    f = np.random.default_rng(0).standard_normal(1000)
    res = stein.stein_discrepancy_bound(pf.normal(), 0, 0.5, f, -np.ones_like(f))
    assert res.value == 0.0


def test_discrepancy_bound_shrinks_along_converging_family():
    target = pf.gamma(8.0)
    consts = {"C": 2048.0, "C_prime": 1.0}
    values = []
    for n in (16, 64, 256):
        spec = gc.equal_tail_weights(n, 1.0, 8.0)
        smp = gc.sample(spec, 50_000, 1)
        res = stein.stein_discrepancy_bound(target, 0, 7.0, smp.F, -smp.gamma_carre, consts)
        assert math.isfinite(res.value) and res.value > 0
        # the second factor is E[Q1^2]^(1/2)
        assert res.gamma_factor == pytest.approx(math.sqrt(gc.e_q1_sq(spec)), rel=0.05)
        values.append(res.value)
    assert values[0] > values[1] > values[2]


def test_discrepancy_bound_reports_nonfinite_moments():
    spec = pf.gamma(8.0)
    f = np.array([0.0, 1.0, 2.0])
    res = stein.stein_discrepancy_bound(spec, 0, 7.0, f, np.zeros(3),
                                        constants={"C": 1.0, "C_prime": 1.0})
    assert math.isinf(res.value) and res.diagnostic
