"""Stein equations for indicator-type test functions and their envelope bounds.

For a target with drift ``a`` and squared diffusion ``b`` the Stein equation is

    2 a(y) g(y) + 1{y in (lo, hi)} b(y) g'(y) = h(y) - E[h(Z)].

Inside the support the integrating-factor solution is used; outside it the
equation is algebraic.  Test functions are ``h = 1{y > x} rho_{k+1}(y)`` (or
``1{y <= x} rho_{k+1}(y)`` when ``x <= lo``).

Integrals are accumulated over the sorted evaluation points with a fixed
Gauss-Legendre rule per segment (after refining the segments) and adaptive
quadrature for the two end pieces reaching the support endpoints.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Union

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigurationError, DomainError, PoleError, UnsupportedError
from .pearson_family import (
    DENSITY_FLOOR,
    GeneralDiffusionSpec,
    PearsonSpec,
    density_derivative,
    quad,
    stationary_density,
)
from .rho_engine import rho_symbolic

BRANCHES = ("interior", "below", "above")
C_X_POINTS = 1999
C_X_SAFETY = 1.1
_GL_NODES, _GL_WEIGHTS = leggauss(16)
_MIN_SEGMENTS = 400
_GL30 = leggauss(30)

Target = Union[PearsonSpec, GeneralDiffusionSpec]


def classify(target: Target, x: float) -> str:
    if x <= target.lo:
        return "below"
    if x >= target.hi:
        return "above"
    return "interior"


@dataclass(frozen=True)
class SteinProblem:
    """Stein equation for ``h_{k,x}`` on a Pearson or general target."""

    target: Target
    k: int
    x_thr: float
    branch: Optional[str] = None

    def __post_init__(self):
        expected = classify(self.target, self.x_thr)
        if self.branch is None:
            object.__setattr__(self, "branch", expected)
        elif self.branch != expected:
            raise ConfigurationError(f"branch {self.branch!r} inconsistent with x_thr={self.x_thr}")
        if self.k < 0:
            raise ConfigurationError("k must be nonnegative")
        if isinstance(self.target, GeneralDiffusionSpec) and self.k != 0:
            raise UnsupportedError("general-diffusion targets only support k = 0")


# -- target adapters --------------------------------------------------------------

class _PearsonOps:
    def __init__(self, spec: PearsonSpec, k: int):
        self.spec, self.k = spec, k
        self.lo, self.hi, self.m = spec.lo, spec.hi, spec.m
        self._rho = rho_symbolic(spec, k + 1)
        self._drho = self._rho.derivative()

    def a(self, y):
        return 0.5 * (self.m - y)

    def da(self, y):
        return np.full_like(np.asarray(y, dtype=float), -0.5)

    def b(self, y):
        return self.spec.b(y)

    def db(self, y):
        return self.spec.db(y)

    def d2b(self, y):
        return np.full_like(np.asarray(y, dtype=float), 2.0 * self.spec.b2)

    def p(self, y):
        return np.asarray(stationary_density(self.spec, y))

    def rho(self, y):
        return self._rho(y)

    def drho(self, y):
        return self._drho(y)

    def mean_h(self, x):
        return float(density_derivative(self.spec, x, self.k, k_max=max(self.k, 6)))


class _GeneralOps:
    def __init__(self, spec: GeneralDiffusionSpec):
        self.spec = spec
        self.lo, self.hi, self.m = spec.lo, spec.hi, spec.mean
        self.a, self.da, self.p = spec.a, spec.da, spec.p
        self.b, self.db, self.d2b = spec.b, spec.db, spec.d2b

    def rho(self, y):
        return (-2.0 * self.a(y) + self.db(y)) / self.b(y)

    def drho(self, y):
        b, db = self.b(y), self.db(y)
        num = -2.0 * self.a(y) + db
        return (-2.0 * self.da(y) + self.d2b(y)) / b - num * db / b**2

    def mean_h(self, x):
        return float(self.spec.p(x))


def _ops(problem: SteinProblem):
    if isinstance(problem.target, PearsonSpec):
        return _PearsonOps(problem.target, problem.k)
    return _GeneralOps(problem.target)


# -- integration --------------------------------------------------------------------

def _refine(edges: np.ndarray) -> np.ndarray:
    """Insert background points so no segment exceeds 1/_MIN_SEGMENTS of the span."""
    if edges.size < 2:
        return edges
    bg = np.linspace(edges[0], edges[-1], _MIN_SEGMENTS + 1)
    return np.unique(np.concatenate([edges, bg]))


def _segment_integrals(f, edges: np.ndarray) -> np.ndarray:
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    pts = 0.5 * (a + b)[:, None] + half[:, None] * _GL_NODES[None, :]
    return (f(pts) * _GL_WEIGHTS).sum(axis=1) * half


# -- solution -------------------------------------------------------------------------

@dataclass
class SteinSolution:
    """Evaluable solution ``(g, g')`` of one Stein problem.

    ``mean_h`` is ``E[h(Z)]``: the density derivative at the threshold on the
    interior branch and zero otherwise.  ``c_x`` (the sup of ``|g|`` over the
    support on the standard grid, times a safety factor) is computed lazily.
    """

    problem: SteinProblem
    mean_h: float
    _ops: object = field(repr=False)
    _c_x: Optional[float] = field(default=None, repr=False)
    c_grid: Optional[np.ndarray] = field(default=None, repr=False)

    # h and h' with the branch indicator applied
    def h(self, y):
        y = np.asarray(y, dtype=float)
        x = self.problem.x_thr
        mask = (y <= x) if self.problem.branch == "below" else (y > x)
        out = np.zeros_like(y)
        if np.any(mask):
            out[mask] = self._ops.rho(y[mask])
        return out

    def dh(self, y):
        y = np.asarray(y, dtype=float)
        x = self.problem.x_thr
        mask = (y <= x) if self.problem.branch == "below" else (y > x)
        out = np.zeros_like(y)
        if np.any(mask):
            out[mask] = self._ops.drho(y[mask])
        return out

    def evaluate(self, y, form: str = "auto"):
        """``(g(y), g'(y))`` on an array of points.

        ``form`` selects the interior integral: ``"upper"`` is ``-int_y^hi``,
        ``"lower"`` is ``int_lo^y``; ``"auto"`` uses the lower form below the
        threshold and the upper form above it, where each is cancellation-free.
        """
        ops, pr = self._ops, self.problem
        y = np.atleast_1d(np.asarray(y, dtype=float))
        g = np.zeros_like(y)
        dg = np.zeros_like(y)
        inside = (y > ops.lo) & (y < ops.hi)
        out = ~inside
        eh = self.mean_h

        if np.any(out):
            yo = y[out]
            a2 = 2.0 * ops.a(yo)
            if np.any(a2 == 0.0):
                raise PoleError("exterior Stein solution evaluated where a(y) = 0")
            with np.errstate(divide="raise", invalid="raise"):
                try:
                    hv, dhv = self.h(yo), self.dh(yo)
                except FloatingPointError as exc:
                    raise PoleError("test function evaluated at a root of b") from exc
            g[out] = (hv - eh) / a2
            # d/dy [(h - Eh) / (2a)] = h'/(2a) - (h - Eh) a' / (2 a^2)
            dg[out] = dhv / a2 - (hv - eh) * ops.da(yo) / (0.5 * a2**2)

        if np.any(inside) and pr.branch == "interior":
            yi = y[inside]
            gi = self._interior_g(yi, form)
            bi = ops.b(yi)
            g[inside] = gi
            dg[inside] = (self.h(yi) - eh - 2.0 * ops.a(yi) * gi) / bi
        return g, dg

    def g(self, y):
        return self.evaluate(y)[0]

    def dg(self, y):
        return self.evaluate(y)[1]

    def _interior_g(self, y, form):
        ops, x, eh = self._ops, self.problem.x_thr, self.mean_h
        order = np.argsort(y)
        ys = y[order]
        edges = np.unique(np.concatenate([ys, [x]]))
        edges = _refine(edges)
        p = ops.p
        rp = lambda w: ops.rho(w) * p(w)

        seg_p = _segment_integrals(p, edges)
        seg_rp = np.where(edges[:-1] >= x, _segment_integrals(rp, edges), 0.0)
        pf = lambda w: float(p(np.array(w)))
        rpf = lambda w: float(rp(np.array(w)))
        head = quad(pf, ops.lo, edges[0], epsrel=1e-12, epsabs=1e-300)
        tail = quad(pf, edges[-1], ops.hi, epsrel=1e-12, epsabs=1e-300)
        tail_r = quad(rpf, max(edges[-1], x), ops.hi, epsrel=1e-12, epsabs=1e-300)
        if edges[-1] < x:
            raise ConfigurationError("threshold outside the refined grid")

        cdf = head + np.concatenate([[0.0], np.cumsum(seg_p)])
        sf = tail + np.concatenate([np.cumsum(seg_p[::-1])[::-1], [0.0]])
        t_rho = tail_r + np.concatenate([np.cumsum(seg_rp[::-1])[::-1], [0.0]])
        t_rho_x = t_rho[np.searchsorted(edges, x)]

        idx = np.searchsorted(edges, ys)
        py = p(ys)
        if np.any(py <= DENSITY_FLOOR):
            raise DomainError("interior Stein solution evaluated where the density underflows")
        bp = ops.b(ys) * py
        above = ys > x
        lower = (t_rho_x - t_rho[idx]) * above - eh * cdf[idx]
        upper = -(t_rho[idx] - eh * sf[idx])
        if form == "lower":
            num = lower
        elif form == "upper":
            num = upper
        elif form == "auto":
            num = np.where(above, upper, lower)
        else:
            raise ConfigurationError(f"unknown form {form!r}")
        out = np.empty_like(y)
        out[order] = num / bp
        return out

    # -- C(x) ----------------------------------------------------------------
    @property
    def c_x(self) -> float:
        if self._c_x is None:
            if self.problem.branch != "interior":
                self._c_x = 0.0
            else:
                grid = self.c_grid if self.c_grid is not None else interior_grid(
                    self.problem.target, C_X_POINTS)
                self._c_x = C_X_SAFETY * float(np.max(np.abs(self._interior_g(grid, "auto"))))
        return self._c_x


def solve(problem: SteinProblem, c_grid=None) -> SteinSolution:
    ops = _ops(problem)
    eh = ops.mean_h(problem.x_thr) if problem.branch == "interior" else 0.0
    return SteinSolution(problem, eh, ops, c_grid=c_grid)


def ode_residual(sol: SteinSolution, y) -> float:
    """Largest relative residual of the Stein equation over the points ``y``.

    Inside the support the equation is checked in integrated form,
    ``[b p g]_{y_i}^{y_{i+1}} = int_{y_i}^{y_{i+1}} (h - Eh) p``, with the right
    side from a 30-point Gauss-Legendre rule on four sub-pieces of every gap
    (split at the threshold), independent of the solver's own nodes.  For a
    Pearson target this is equivalent to the differential form because
    ``(b p)' = 2 a p``.  Outside the support the algebraic equation
    ``2 a g = h - Eh`` is checked pointwise.  Residuals are scaled by
    ``max(1, size of the terms)``.
    """
    ops = sol._ops
    y = np.sort(np.atleast_1d(np.asarray(y, dtype=float)))
    g, _ = sol.evaluate(y)
    out = ~((y > ops.lo) & (y < ops.hi))
    worst = 0.0
    if np.any(out):
        rhs = sol.h(y[out]) - sol.mean_h
        r = 2.0 * ops.a(y[out]) * g[out] - rhs
        worst = float(np.max(np.abs(r) / np.maximum(1.0, np.abs(rhs))))
    yi = y[~out]
    if yi.size < 2:
        return worst
    x = sol.problem.x_thr
    bpg = ops.b(yi) * ops.p(yi) * g[~out]
    cuts = np.unique(np.concatenate([yi, [x] if yi[0] < x < yi[-1] else []]))
    fine = np.unique(np.concatenate([cuts[:-1] + np.diff(cuts) * f for f in (0, .25, .5, .75)]
                                    + [cuts[-1:]]))
    nodes, weights = _GL30
    a, b = fine[:-1], fine[1:]
    half = 0.5 * (b - a)
    pts = 0.5 * (a + b)[:, None] + half[:, None] * nodes[None, :]
    f = (sol.h(pts) - sol.mean_h) * ops.p(pts)
    seg = (f * weights).sum(axis=1) * half
    acc = np.concatenate([[0.0], np.cumsum(seg)])
    at = np.searchsorted(fine, yi)
    rhs = np.diff(acc[at])
    lhs = np.diff(bpg)
    scale = np.maximum(1.0, np.abs(bpg[1:]) + np.abs(bpg[:-1]))
    return max(worst, float(np.max(np.abs(lhs - rhs) / scale)))


# -- grids ----------------------------------------------------------------------------

# ranges used for the domination sweeps of the built-in targets
_RANGES = {
    "normal": {"interior": (-8.0, 8.0)},
    "gamma": {"interior": (0.05, 30.0), "below": (-10.0, -0.05)},
    "beta": {"interior": (0.01, 0.97), "below": (-2.0, -0.02), "above": (1.02, 3.0)},
}


def _sd(spec) -> float:
    if isinstance(spec, PearsonSpec):
        p = lambda w: stationary_density(spec, w)
    else:
        p = spec.p
    m = quad(lambda w: w * p(w), spec.lo, spec.hi)
    v = quad(lambda w: (w - m) ** 2 * p(w), spec.lo, spec.hi)
    return math.sqrt(v)


def ranges_for(target: Target) -> dict:
    name = getattr(target, "name", None)
    if name in _RANGES and (name != "gamma" or target.params == (7.0,)) and (
            name != "beta" or target.params == (5.0, 10.0)):
        return _RANGES[name]
    # generic fallback: +-8 sd, pulled in by 1% of an sd at finite endpoints
    sd = _sd(target)
    m = target.m if isinstance(target, PearsonSpec) else target.mean
    lo = target.lo + 0.01 * sd if math.isfinite(target.lo) else m - 8 * sd
    hi = target.hi - 0.01 * sd if math.isfinite(target.hi) else m + 8 * sd
    out = {"interior": (lo, hi)}
    if math.isfinite(target.lo):
        out["below"] = (target.lo - 8 * sd, target.lo - 0.01 * sd)
    if math.isfinite(target.hi):
        out["above"] = (target.hi + 0.01 * sd, target.hi + 8 * sd)
    return out


def interior_grid(target: Target, n: int) -> np.ndarray:
    lo, hi = ranges_for(target)["interior"]
    return np.linspace(lo, hi, n)


def sweep_grid(target: Target, n_interior: int = 1000, n_exterior: int = 250) -> np.ndarray:
    """Interior grid plus exterior pieces on either side of a finite support."""
    r = ranges_for(target)
    parts = [np.linspace(*r["interior"], n_interior)]
    for side in ("below", "above"):
        if side in r:
            parts.append(np.linspace(*r[side], n_exterior))
    return np.sort(np.concatenate(parts))


def dense_grid(target: Target) -> np.ndarray:
    """Twice as dense as :func:`sweep_grid`; contains it as a subset."""
    return sweep_grid(target, 2 * 1000 - 1, 2 * 250 - 1)


def default_thresholds(target: Target) -> dict:
    """One threshold per branch; infinite when that side of the support is open."""
    m = target.m if isinstance(target, PearsonSpec) else target.mean
    sd = _sd(target)
    return {"interior": m + 0.5 * sd if isinstance(target, PearsonSpec) and target.name == "normal"
            else m - 0.25 * sd,
            "below": target.lo, "above": target.hi}


# -- envelopes --------------------------------------------------------------------------

def _poly_abs_sum(y, top):
    ay = np.abs(y)
    return sum(ay**j for j in range(top + 1))


def target_key(spec: PearsonSpec) -> str:
    if spec.name:
        if spec.params:
            return f"{spec.name}({','.join(f'{p:g}' for p in spec.params)})"
        return spec.name
    return "pearson" + json.dumps([spec.b2, spec.b1, spec.b0, spec.m])


@lru_cache(maxsize=None)
def _frozen_constants() -> dict:
    try:
        text = resources.files("pearson_stein").joinpath("data/stein_constants.json").read_text()
    except FileNotFoundError:
        return {}
    return json.loads(text)


@lru_cache(maxsize=None)
def constants_for(spec: PearsonSpec) -> dict:
    """Frozen ``C`` and ``C'`` for ``spec``; calibrated on the fly when none are frozen."""
    frozen = _frozen_constants().get(target_key(spec))
    if frozen is not None:
        return {"C": frozen["C"], "C_prime": frozen["C_prime"]}
    warnings.warn(f"no frozen Stein constants for {target_key(spec)}; calibrating",
                  RuntimeWarning, stacklevel=2)
    cal = calibrate_constants(spec)
    return {"C": cal["C"], "C_prime": cal["C_prime"]}


@lru_cache(maxsize=256)
def _cached_solution(spec, k, x) -> SteinSolution:
    return solve(SteinProblem(spec, k, x))


def c_of_x(target: Target, k: int, x: float) -> float:
    """The constant ``C(x)``; zero for thresholds outside the support."""
    if classify(target, x) != "interior":
        return 0.0
    return _cached_solution(target, k, float(x)).c_x


def _u_parts(i, k, x, y, spec, cx):
    """Envelope ``U_i`` split as ``free + mult * const`` (``const`` is C or C')."""
    y = np.asarray(y, dtype=float)
    lo, hi, m = spec.lo, spec.hi, spec.m
    inside = (y > lo) & (y < hi)
    out = ~inside
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.abs(spec.b(y))
        dm = np.abs(y - m)
        s = _poly_abs_sum(y, k + 1)
        s_low = _poly_abs_sum(y, k)
        db = np.abs(spec.db(y))
        pk = abs(float(density_derivative(spec, x, k, k_max=max(k, 6)))) if lo < x < hi else 0.0
        zero = np.zeros_like(y)
        if i == 1:
            free = np.where(out, pk / dm, 0.0) + np.where(inside, cx, 0.0)
            mult = np.where(y >= hi, s / (b ** (k + 1) * dm), 0.0)
        elif i == 2:
            free = np.where(inside, cx * dm / b + pk / b, 0.0)
            mult = (np.where(inside, s / b ** (k + 1), 0.0)
                    + np.where(y >= hi, s / (b ** (k + 1) * dm**2), 0.0)
                    + np.where(out, pk / dm**2, 0.0))
        elif i in (3, 4, 5, 6):
            side = (y <= lo) if i in (3, 4) else (y > hi)
            free = zero
            if i in (3, 5):
                mult = np.where(side, s / (b ** (k + 1) * dm), 0.0)
            else:
                mult = np.where(side, s / (b ** (k + 1) * dm**2) + s_low / (b ** (k + 1) * dm)
                                + db * s / (b ** (k + 2) * dm), 0.0)
        else:
            raise ConfigurationError("envelope index must be in 1..6")
    return free, mult


def envelope_U(i: int, k: int, x: float, y, spec: PearsonSpec, constants: Optional[dict] = None,
               cx: Optional[float] = None):
    """Pearson envelope ``U_i(k, x, y)``; ``x`` is ignored for ``i >= 3``."""
    consts = constants or constants_for(spec)
    if cx is None:
        cx = c_of_x(spec, k, x) if i in (1, 2) else 0.0
    free, mult = _u_parts(i, k, x, y, spec, cx)
    const = consts["C_prime"] if i == 2 else consts["C"]
    out = free + const * mult
    return float(out) if np.ndim(out) == 0 else out


def envelope_V(i: int, x: float, y, spec: GeneralDiffusionSpec, cx: Optional[float] = None):
    """General-diffusion envelope ``V_i(x, y)`` (the ``k = 0`` test function)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ops = _GeneralOps(spec)
    lo, hi = spec.lo, spec.hi
    inside = (y > lo) & (y < hi)
    out = ~inside
    px = float(spec.p(x)) if lo < x < hi else 0.0
    if cx is None:
        cx = c_of_x(spec, 0, x) if i in (1, 2) else 0.0
    res = np.zeros_like(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        a, da = ops.a(y), ops.da(y)
        absa = np.abs(a)
        # the exterior terms need b (and b', b'') outside the support as well
        b_all = ops.b(y)
        db_all = ops.db(y)
        num = np.abs(-2.0 * a + db_all)
        d2 = np.abs(((-2.0 * da + ops.d2b(y)) * b_all - (-2.0 * a + db_all) * db_all)
                    / (b_all**2 * a))
        hs = np.abs((-2.0 * a + db_all) * da / (b_all * 2.0 * a**2))
        if i == 1:
            res = (np.where(y >= hi, num / (np.abs(b_all) * 2.0 * absa), 0.0)
                   + np.where(out, px / (2.0 * absa), 0.0) + np.where(inside, cx, 0.0))
        elif i == 2:
            res = (np.where(inside, 2.0 * cx * absa / np.abs(b_all) + num / b_all**2
                            + px / np.abs(b_all), 0.0)
                   + np.where(y >= hi, 2.0 * d2 + hs, 0.0)
                   + np.where(out, px * np.abs(da) / (2.0 * a**2), 0.0))
        elif i in (3, 5):
            side = (y <= lo) if i == 3 else (y > hi)
            res = np.where(side, num / (np.abs(b_all) * np.abs(2.0 * a)), 0.0)
        elif i in (4, 6):
            side = (y <= lo) if i == 4 else (y > hi)
            first = d2 if i == 4 else d2 / 2.0
            res = np.where(side, first + hs, 0.0)
        else:
            raise ConfigurationError("envelope index must be in 1..6")
    return float(res[0]) if res.size == 1 else res


# -- calibration ------------------------------------------------------------------------

def _branch_pairs(branch):
    return {"interior": (1, 2), "below": (3, 4), "above": (5, 6)}[branch]


def calibrate_constants(spec: PearsonSpec, k_values=(0, 1, 2, 3), grid=None) -> dict:
    """Smallest powers of two ``C``, ``C'`` giving domination on ``grid``.

    Every branch's default threshold and each ``k`` in ``k_values`` are swept;
    the dense grid (a superset of the acceptance grid) is the default.
    """
    grid = dense_grid(spec) if grid is None else np.asarray(grid, dtype=float)
    need = {"C": 0.0, "C_prime": 0.0}
    for k in k_values:
        for branch, x in default_thresholds(spec).items():
            if not math.isfinite(x):
                continue
            sol = solve(SteinProblem(spec, k, x))
            ys = grid[_valid_points(spec, sol, grid)]
            g, dg = sol.evaluate(ys)
            cx = sol.c_x
            for i, val in zip(_branch_pairs(branch), (g, dg)):
                free, mult = _u_parts(i, k, x, ys, spec, cx)
                excess = np.abs(val) - free * (1 + 1e-12)
                bad = excess > 0
                if np.any(bad & (mult <= 0)):
                    raise ConfigurationError(f"U{i} cannot dominate for k={k}, branch={branch}")
                if np.any(bad):
                    key = "C_prime" if i == 2 else "C"
                    need[key] = max(need[key], float(np.max(excess[bad] / mult[bad])))
    out = {}
    for key, v in need.items():
        out[key] = 2.0 ** math.ceil(math.log2(v)) if v > 0 else 1.0
    out["needed"] = need
    return out


def _valid_points(spec, sol, grid):
    """Drop points where the solution has a pole (roots of b hit by h, or a = 0)."""
    ok = np.isfinite(grid)
    ok &= ~np.isclose(grid, spec.m, rtol=0, atol=0)
    if isinstance(spec, PearsonSpec):
        for r in spec.b_roots():
            ok &= grid != r
    return ok


def write_frozen_constants(path, specs) -> dict:
    table = {}
    for spec in specs:
        cal = calibrate_constants(spec)
        table[target_key(spec)] = {"C": cal["C"], "C_prime": cal["C_prime"], "k_max": 3,
                                   "needed": cal["needed"]}
    with open(path, "w") as fh:
        json.dump(table, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return table


def acceptance_targets():
    from .pearson_family import beta, gamma, normal
    return [normal(), gamma(7.0), beta(5.0, 10.0)]


# -- domination sweep ---------------------------------------------------------------------

@dataclass
class DominationReport:
    spec_key: str
    k: int
    branch: str
    x_thr: float
    y: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    env_g: np.ndarray
    env_dg: np.ndarray

    @property
    def pass_g(self):
        return np.abs(self.g) <= self.env_g * (1 + 1e-12)

    @property
    def pass_dg(self):
        return np.abs(self.dg) <= self.env_dg * (1 + 1e-12)

    @property
    def violations(self) -> int:
        return int(np.sum(~self.pass_g) + np.sum(~self.pass_dg))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["y", "g", "g_prime", "U_g", "U_gprime", "pass_g", "pass_gprime"])
            for row in zip(self.y, self.g, self.dg, self.env_g, self.env_dg, self.pass_g,
                           self.pass_dg):
                w.writerow([repr(float(v)) for v in row[:5]] + [int(row[5]), int(row[6])])


def domination_sweep(spec: PearsonSpec, k: int, branch: str, grid=None,
                     constants: Optional[dict] = None) -> DominationReport:
    """Evaluate ``|g| <= U`` and ``|g'| <= U`` for one branch on the sweep grid."""
    x = default_thresholds(spec)[branch]
    grid = sweep_grid(spec) if grid is None else np.asarray(grid, dtype=float)
    if not math.isfinite(x):
        # open side of the support: h vanishes identically and so does g
        z = np.zeros_like(grid)
        return DominationReport(target_key(spec), k, branch, x, grid, z, z, z.copy(), z.copy())
    sol = solve(SteinProblem(spec, k, x))
    ys = grid[_valid_points(spec, sol, grid)]
    g, dg = sol.evaluate(ys)
    i_g, i_dg = _branch_pairs(branch)
    consts = constants or constants_for(spec)
    eg = envelope_U(i_g, k, x, ys, spec, consts, cx=sol.c_x)
    edg = envelope_U(i_dg, k, x, ys, spec, consts, cx=sol.c_x)
    return DominationReport(target_key(spec), k, branch, x, ys, g, dg, eg, edg)


def domination_sweep_V(spec: GeneralDiffusionSpec, branch: str, grid=None,
                       x: Optional[float] = None) -> DominationReport:
    """``|g| <= V`` and ``|g'| <= V`` for the ``k = 0`` problem on a general target."""
    x = default_thresholds(spec)[branch] if x is None else float(x)
    grid = sweep_grid(spec) if grid is None else np.asarray(grid, dtype=float)
    if not math.isfinite(x):
        z = np.zeros_like(grid)
        return DominationReport("general", 0, branch, x, grid, z, z, z.copy(), z.copy())
    sol = solve(SteinProblem(spec, 0, x))
    ys = grid[np.isfinite(grid) & (grid != spec.mean)]
    g, dg = sol.evaluate(ys)
    i_g, i_dg = _branch_pairs(branch)
    eg = envelope_V(i_g, x, ys, spec, cx=sol.c_x)
    edg = envelope_V(i_dg, x, ys, spec, cx=sol.c_x)
    return DominationReport("general", 0, branch, x, ys, g, dg, eg, edg)


# -- discrepancy bound ---------------------------------------------------------------------

@dataclass
class DiscrepancyBound:
    value: float
    envelope_factor: float
    gamma_factor: float
    moments: dict
    diagnostic: str = ""


def stein_discrepancy_bound(spec: PearsonSpec, k: int, x: float, f_samples, gamma_term,
                            constants: Optional[dict] = None) -> DiscrepancyBound:
    """``(E[U2^2]^.5 + E[U4^2]^.5 + E[U6^2]^.5) * E[(b(F) + Gamma(L^-1 F, F))^2]^.5``.

    ``gamma_term`` holds ``Gamma(L^-1 F, F)`` per sample, which has a closed form
    only for the weighted-Gamma constructions.
    """
    f = np.asarray(f_samples, dtype=float)
    gt = np.asarray(gamma_term, dtype=float)
    if f.shape != gt.shape:
        raise ConfigurationError("samples and Gamma terms must have the same shape")
    second = float(np.sqrt(np.mean((spec.b(f) + gt) ** 2)))
    consts = constants or constants_for(spec)
    moments = {}
    diag = []
    for i in (2, 4, 6):
        with np.errstate(all="ignore"):
            u = envelope_U(i, k, x, f, spec, consts)
            mom = float(np.sqrt(np.mean(np.asarray(u) ** 2)))
        if not math.isfinite(mom):
            diag.append(f"E[U{i}^2] is not finite on these samples")
            mom = math.inf
        moments[f"U{i}"] = mom
    first = sum(moments.values())
    if second == 0.0:
        value = 0.0
    elif math.isinf(first):
        value = math.inf
    else:
        value = first * second
    return DiscrepancyBound(value, first, second, moments, "; ".join(diag))
