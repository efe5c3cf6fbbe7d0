"""Experiment runners behind the command-line interface.

Each runner takes a plain configuration dictionary (parsed from JSON) and
returns a :class:`Report`.  Reports carry a flat results table plus a summary
and are written as ``results.csv``, ``summary.json`` and ``config.json`` in
one directory per run.  All randomness is derived from the configured seed.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import __version__
from . import gamma_chaos as gc
from .density_estimation import (
    kde,
    negative_moment,
    normal_density_derivative,
    smoothed_density,
)
from .diffusion_sim import SimConfig, simulate
from .errors import ConfigurationError
from .pearson_family import (
    PearsonSpec,
    check_drift_diffusion_relation,
    density_derivative,
    gamma as gamma_target,
    stationary_density,
)
from .rho_engine import RhoTable, build_rho_table, representation_residual, rho, rho_via_symbolic
from .stein import (
    SteinProblem,
    _valid_points,
    acceptance_targets,
    default_thresholds,
    domination_sweep,
    ode_residual,
    solve,
    sweep_grid,
    target_key,
)

MIN_ALPHA_DENSITY = 6.0


@dataclass
class Report:
    experiment: str
    ok: bool
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    message: str = ""


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    return v


def write_report(report: Report, config: dict, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    cols = []
    for row in report.rows:
        cols.extend(c for c in row if c not in cols)
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for row in report.rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in row.items()})
    summary = {
        "experiment": report.experiment,
        "ok": report.ok,
        "message": report.message,
        "config_hash": config_hash(config),
        "seed": config.get("seed"),
        "version": __version__,
        **report.summary,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _seed(config: dict) -> int:
    if "seed" not in config or config["seed"] is None:
        raise ConfigurationError("a seed is required")
    return int(config["seed"])


def _target(config: dict, default: dict) -> PearsonSpec:
    return PearsonSpec.from_dict(config.get("target", default))


# -- exponential convergence of a Pearson diffusion -----------------------------------

def _ou_transition(spec: PearsonSpec, z0: float, t: float):
    """Mean and variance at time ``t`` when the target is normal (constant ``b``)."""
    if spec.b2 != 0 or spec.b1 != 0:
        return None
    decay = math.exp(-0.5 * t)
    return spec.m + (z0 - spec.m) * decay, spec.b0 * (1.0 - decay**2)


def _fit_rate(ts, gaps, ses):
    keep = np.abs(gaps) >= 3 * ses
    if np.sum(keep) < 3:
        return {"status": "already converged", "n_window": int(np.sum(keep))}
    fit = stats.linregress(np.asarray(ts)[keep], np.log(np.abs(gaps[keep])))
    return {"status": "fitted", "slope": fit.slope, "intercept": fit.intercept,
            "r2": fit.rvalue**2, "n_window": int(np.sum(keep))}


def run_exp_convergence(config: dict) -> Report:
    """Density-derivative gaps of ``Z_t`` started at ``z0`` versus the stationary law.

    Gaps are measured against the kernel-smoothed stationary density (same
    bandwidth as the estimate), so kernel bias does not enter the gap.  When
    the target is normal the exact smoothed transition density gives an
    oracle gap per cell.
    """
    seed = _seed(config)
    spec = _target(config, {"name": "normal"})
    z0 = float(config.get("z0", 3.0))
    xs = [float(v) for v in config.get("x_points", [0.0])]
    orders = [int(k) for k in config.get("orders", [0, 1])]
    t_grid = [float(t) for t in config.get("t_grid", [0.5 * i for i in range(1, 13)])]
    sim = SimConfig(tuple(t_grid), int(config.get("n_paths", 200_000)), seed,
                    dt=float(config.get("dt", 1e-3)),
                    block_size=int(config.get("block_size", 8192)),
                    workers=int(config.get("workers", 1)))
    ens = simulate(spec, z0, sim)
    pdf = lambda y: stationary_density(spec, y)
    rows = []
    for t in t_grid:
        z = ens.at(t)
        for k in orders:
            est = kde(z, xs, k=k)
            h = est.bandwidth
            smooth = smoothed_density(pdf, xs, h, k, spec.lo, spec.hi)
            ou = _ou_transition(spec, z0, t)
            for i, x in enumerate(xs):
                row = {"t": t, "x": x, "k": k, "estimate": est.values[i], "stderr": est.stderr[i],
                       "bandwidth": h, "stationary_smoothed": smooth[i],
                       "stationary_exact": float(density_derivative(spec, x, k)),
                       "gap": est.values[i] - smooth[i]}
                if ou is not None:
                    mt, vt = ou
                    row["oracle_gap"] = float(normal_density_derivative(x, mt, vt + h * h, k)) - smooth[i]
                    row["oracle_ok"] = abs(row["gap"] - row["oracle_gap"]) <= 3 * row["stderr"]
                row["in_window"] = abs(row["gap"]) >= 3 * row["stderr"]
                rows.append(row)
    fits = []
    for x, k in itertools.product(xs, orders):
        cell = [r for r in rows if r["x"] == x and r["k"] == k]
        fit = _fit_rate([r["t"] for r in cell], np.array([r["gap"] for r in cell]),
                        np.array([r["stderr"] for r in cell]))
        fits.append({"x": x, "k": k, **fit})
    summary = {"target": target_key(spec), "z0": z0, "n_paths": int(ens.values.shape[0]),
               "n_flagged": ens.n_flagged, "fits": fits}
    if any("oracle_ok" in r for r in rows):
        summary["oracle_all_within_3se"] = all(r["oracle_ok"] for r in rows)
    return Report("exp-convergence", True, rows, summary)


# -- Foster-Lyapunov drift check ----------------------------------------------------------

def lyapunov_generator(spec: PearsonSpec, y):
    """``L V`` for ``V(y) = sqrt(y^2 + 1)``: ``a V' + b V'' / 2``."""
    y = np.asarray(y, dtype=float)
    v = np.sqrt(y * y + 1.0)
    return 0.5 * (spec.m - y) * y / v + 0.5 * spec.b(y) / v**3


def _lyapunov_grid(spec: PearsonSpec, y_max: float, n: int) -> np.ndarray:
    mags = np.geomspace(1e-3, y_max, n)
    pts = [np.zeros(1)] if spec.lo <= 0 <= spec.hi else []
    pts += [mags, -mags, np.array([spec.m])]
    y = np.concatenate(pts)
    return np.unique(y[(y >= spec.lo) & (y <= spec.hi)])


def run_lyapunov_check(config: dict) -> Report:
    """Largest ``c`` on a grid for which ``LV <= -c V + d`` holds with finite ``d``.

    A value of ``c`` is admissible when ``LV + c V <= 0`` on the outer tenth
    (in log scale) of every unbounded side of the grid; ``d`` is then the
    maximum of ``LV + c V`` and ``R1`` the radius beyond which it stays
    nonpositive.  On a bounded support every ``c`` is admissible and the
    largest grid value is reported.
    """
    _seed(config)
    spec = _target(config, {"name": "normal"})
    y_max = float(config.get("y_max", 1e4))
    y = _lyapunov_grid(spec, y_max, int(config.get("n_grid", 2000)))
    c_grid = np.asarray(config.get("c_grid", np.round(np.arange(0.01, 1.0, 0.01), 10)), dtype=float)
    lv = lyapunov_generator(spec, y)
    v = np.sqrt(y * y + 1.0)
    tail = np.abs(y) >= y_max ** 0.9
    best = None
    for c in sorted(c_grid, reverse=True):
        s = lv + c * v
        if np.any(s[tail] > 0):
            continue
        pos = s > 0
        r1 = float(np.max(np.abs(y[pos]))) if np.any(pos) else 0.0
        best = (float(c), float(max(0.0, s.max())), r1)
        break
    rows = [{"y": yy, "LV": a, "V": b} for yy, a, b in zip(y, lv, v)]
    summary = {"target": target_key(spec), "y_max": y_max}
    if spec.lo <= 0 <= spec.hi:
        lv0 = float(lyapunov_generator(spec, 0.0))
        summary.update(LV0=lv0, LV0_closed_form=0.5 * float(spec.b(0.0)),
                       LV0_error=abs(lv0 - 0.5 * float(spec.b(0.0))))
    if best is None:
        return Report("lyapunov", False, rows, summary, "no admissible (c, d) on the grid")
    c, d, r1 = best
    for r in rows:
        r["LV_plus_cV"] = r["LV"] + c * r["V"]
    summary.update(c=c, d=d, R1=r1,
                   note="petiteness of compact sets is assumed for the built-in targets, not checked")
    return Report("lyapunov", True, rows, summary)


# -- weighted Gamma sums ---------------------------------------------------------------------

def _chaos_specs(config: dict) -> list:
    g = float(config.get("gamma", 1.0))
    alpha = float(config.get("alpha", 8.0))
    if "weights" in config:
        return [gc.WeightedGammaSpec(g, tuple(config["weights"]), alpha)]
    family = config.get("family", "harmonic")
    ns = [int(n) for n in config.get("n_schedule", [8, 16, 32, 64, 128, 256])]
    return [gc.weight_family(family, n, g, alpha) for n in ns]


def run_gamma_superconvergence(config: dict) -> Report:
    """Closed forms, negative moments and KDE density gaps along a weight schedule.

    Density gaps are ``KDE(x) - (K_h * p_Gamma(alpha))(x)`` with the estimate's
    own bandwidth ``h``.
    """
    seed = _seed(config)
    alpha = float(config.get("alpha", 8.0))
    if not alpha > MIN_ALPHA_DENSITY:
        raise ConfigurationError(
            f"refused: density convergence of weighted Gamma sums is established only for "
            f"alpha > {MIN_ALPHA_DENSITY:g} (got alpha={alpha:g})")
    specs = _chaos_specs(config)
    mismatch = [s.variance_mismatch() for s in specs]
    if any(abs(d) > 1e-9 * alpha for d in mismatch):
        rows = [{"k": s.k, "variance_mismatch": d} for s, d in zip(specs, mismatch)]
        return Report("gamma-superconvergence", False, rows, {"variance_mismatch": mismatch},
                      "variance mismatch: gamma * sum(lambda^2) != alpha")
    xs = [float(x) for x in config.get("x_points", [4, 6, 8, 10, 12])]
    n_samples = int(config.get("n_samples", 1_000_000))
    grade = float(config.get("chaos_grade", 2.0))
    samples = gc.sample_nested(specs, n_samples, seed, fields=("F",),
                               workers=int(config.get("workers", 1)))
    target = gamma_target(alpha)
    pdf = lambda y: stationary_density(target, y)
    rows, per_n = [], []
    for spec, smp in zip(specs, samples):
        F = smp.F
        est = kde(F, xs)
        smooth = smoothed_density(pdf, xs, est.bandwidth, 0, target.lo, target.hi)
        gaps = est.values - smooth
        mu_mc = [float(np.mean(F**j)) for j in range(1, 5)]
        info = {
            "k": spec.k,
            "e_q1_sq": gc.e_q1_sq(spec),
            "e_lq1_sq": gc.e_lq1_sq(spec),
            "M_exact": gc.four_moment_M(gc.exact_moments(spec), grade, target),
            "M_mc": gc.four_moment_M(mu_mc, grade, target),
        }
        for q in (4, 6):
            nm = negative_moment(F, q)
            info[f"neg_moment_{q}"] = nm.mean
            info[f"neg_moment_{q}_se"] = nm.std_err
            info[f"neg_moment_{q}_nonpos_part"] = nm.negative_part
            info[f"neg_moment_{q}_unstable"] = nm.unstable
        j = int(np.argmax(np.abs(gaps)))
        info.update(sup_gap=float(abs(gaps[j])), sup_gap_se=float(est.stderr[j]),
                    sup_gap_x=xs[j], within_3se=bool(np.all(np.abs(gaps) <= 3 * est.stderr)))
        per_n.append(info)
        for x, e, s, sm, gp in zip(xs, est.values, est.stderr, smooth, gaps):
            rows.append({**{k: v for k, v in info.items() if not k.startswith("sup")},
                         "x": x, "kde": e, "stderr": s, "target_smoothed": sm, "gap": gp,
                         "bandwidth": est.bandwidth})
    e = [r["e_q1_sq"] for r in per_n]
    sup = [r["sup_gap"] for r in per_n]
    summary = {
        "alpha": alpha, "gamma": specs[0].gamma_shape, "family": config.get("family", "harmonic"),
        "n_samples": n_samples, "per_n": per_n,
        "e_q1_sq_strictly_decreasing": bool(all(b < a for a, b in zip(e, e[1:]))),
        "sup_gap_decreasing": bool(all(b <= a for a, b in zip(sup, sup[1:]))),
        "final_within_3se": per_n[-1]["within_3se"],
    }
    return Report("gamma-superconvergence", True, rows, summary)


# -- validation suite -------------------------------------------------------------------------

DEFAULT_TOLERANCES = {"rho": 1e-9, "representation": 1e-6, "drift_diffusion": 1e-7,
                      "stein_residual": 1e-7, "spectral": 1e-12, "four_moment": 1e-10}


def _perturbed(table: RhoTable, k: int, j: int, delta: float) -> RhoTable:
    coeffs = [list(r) for r in table.coeffs]
    coeffs[k][j] += delta
    return RhoTable(table.spec, table.k_max, tuple(tuple(r) for r in coeffs))


def rho_cross_check(spec: PearsonSpec, table: RhoTable, k_max: int, n_points: int = 200):
    """Max relative gap between the table and symbolic ``rho_k``, ``k = 1..k_max+1``.

    The gap is measured as ``|a - b| / (1 + |b|)`` so zeros of ``rho_k`` do not
    dominate.
    """
    lo, hi = sweep_grid(spec, n_points, 0)[[0, -1]]
    xs = np.linspace(lo, hi, n_points)
    out = {}
    for k in range(1, k_max + 2):
        a = rho(table, k, xs)
        b = rho_via_symbolic(spec, k, xs)
        out[k] = float(np.max(np.abs(a - b) / (1.0 + np.abs(b))))
    return out


def _brute_symmetric(values, q):
    return sum(math.prod(c) for c in itertools.permutations(values, q))


def run_validation_suite(config: dict) -> Report:
    """Invariant sweeps over the built-in targets; ``ok`` only if every sweep passes.

    ``tolerances`` overrides entries of :data:`DEFAULT_TOLERANCES`;
    ``perturb = {"target", "k", "j", "delta"}`` shifts one rho coefficient
    before the cross-check (a mutation test).
    """
    seed = _seed(config)
    tol = {**DEFAULT_TOLERANCES, **config.get("tolerances", {})}
    k_max = int(config.get("k_max", 5))
    perturb = config.get("perturb")
    rows = []

    def add(sweep, target, k, metric, value, limit):
        rows.append({"sweep": sweep, "target": target, "k": k, "metric": metric,
                     "value": float(value), "tolerance": float(limit),
                     "passed": bool(value <= limit)})

    for spec in acceptance_targets():
        key = target_key(spec)
        table = build_rho_table(spec, k_max)
        if perturb and perturb.get("target", key) == key:
            table = _perturbed(table, int(perturb.get("k", 2)), int(perturb.get("j", 0)),
                               float(perturb.get("delta", 1e-3)))
        for k, err in rho_cross_check(spec, table, k_max).items():
            add("rho", key, k, "max_rel_diff", err, tol["rho"])

        lo, hi = sweep_grid(spec, 12, 0)[[0, -1]]
        xs = np.linspace(lo, hi, 12)[1:-1]
        clean = build_rho_table(spec, 4)
        for k in range(4):
            worst = max(representation_residual(clean, k, x) for x in xs)
            add("representation", key, k, "max_abs_residual", worst, tol["representation"])

        add("drift_diffusion", key, "", "max_abs_residual",
            check_drift_diffusion_relation(spec, xs), tol["drift_diffusion"])

        grid = sweep_grid(spec)
        for k in range(4):
            for branch, x in default_thresholds(spec).items():
                rep = domination_sweep(spec, k, branch, grid)
                add("domination", f"{key}:{branch}", k, "violations", rep.violations, 0)
                if math.isfinite(x):
                    sol = solve(SteinProblem(spec, k, x))
                    r = ode_residual(sol, grid[_valid_points(spec, sol, grid)])
                    add("stein_residual", f"{key}:{branch}", k, "max_rel_residual", r,
                        tol["stein_residual"])

    rng = np.random.default_rng(seed)
    for k in range(1, 7):
        lam = np.sort(rng.uniform(0.05, 1.5, k))[::-1]
        spec = gc.WeightedGammaSpec(1.0, tuple(lam), 2.0)
        R, S = gc.spectral_sums(spec, k)
        worst = 0.0
        for q in range(1, k + 1):
            for fast, vals in ((R[q], lam**2), (S[q], lam)):
                brute = _brute_symmetric(list(vals), q)
                worst = max(worst, abs(fast - brute) / abs(brute))
        add("spectral", "weighted-gamma", k, "max_rel_diff", worst, tol["spectral"])

    for name, target, mu in (("gamma(7)", gamma_target(7.0), gc.gamma_moments(7.0)),
                             ("normal", acceptance_targets()[0], [0.0, 1.0, 0.0, 3.0])):
        # grades up to 2 (1 - b2), where M reduces to a multiple of E[V(Z)] = 0
        for q in (1.0, 2.0):
            val = gc.four_moment_M(mu, q, target)
            add("four_moment", name, q, "abs_M_at_target", abs(val), tol["four_moment"])

    failed = [r for r in rows if not r["passed"]]
    summary = {"n_checks": len(rows), "n_failed": len(failed), "tolerances": tol,
               "failed": [f"{r['sweep']}:{r['target']}:k={r['k']}" for r in failed]}
    return Report("validate", not failed, rows, summary)


RUNNERS = {
    "exp-convergence": run_exp_convergence,
    "lyapunov": run_lyapunov_check,
    "gamma-superconvergence": run_gamma_superconvergence,
    "validate": run_validation_suite,
}
