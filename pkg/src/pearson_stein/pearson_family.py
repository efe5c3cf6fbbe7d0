"""Pearson targets, their stationary densities and density derivatives.

A Pearson target is fixed by the squared diffusion coefficient
``b(x) = b2 x^2 + b1 x + b0``, the stationary mean ``m`` and the support
``(lo, hi)``.  With the mean-reversion speed fixed to 1/2 the diffusion is

    dZ = (m - Z)/2 dt + sqrt(b(Z) 1{Z in (lo, hi)}) dB

and its stationary density is ``C / b(x) * exp(-int_m^x (y - m)/b(y) dy)``.
The inner integral has a closed form for every quadratic ``b``; only the
normalizing constant ``C`` needs quadrature.

General one-dimensional diffusions (drift ``a`` given, ``b`` induced by the
density) are represented by :class:`GeneralDiffusionSpec`.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import ConfigurationError, DomainError
from .rational import BRational, horner

K_MAX = 6
DENSITY_FLOOR = 1e-300
QUAD_EPSREL = 1e-10
# below this relative size of b2 the exponent is integrated numerically
NEAR_LINEAR = 1e-6


def quad(f, lo, hi, points=None, epsrel=QUAD_EPSREL, epsabs=0.0, limit=400):
    """Adaptive quadrature on a possibly infinite interval.

    Thin wrapper over QUADPACK: infinite endpoints are handled by its
    internal variable substitution.  Breakpoints are only passed on finite
    intervals (QUADPACK does not accept them otherwise), so callers split at
    kinks themselves when an endpoint is infinite.
    """
    if lo == hi:
        return 0.0
    if points is not None and (math.isinf(lo) or math.isinf(hi)):
        pts = sorted(p for p in points if lo < p < hi)
        edges = [lo, *pts, hi]
        return sum(quad(f, a, b, None, epsrel, epsabs, limit) for a, b in zip(edges[:-1], edges[1:]))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        kw = {"points": points} if points is not None else {}
        val, _ = integrate.quad(f, lo, hi, epsabs=epsabs, epsrel=epsrel, limit=limit, **kw)
    return float(val)


def _parse_bound(v) -> float:
    if isinstance(v, str):
        s = v.strip().lower()
        if s in ("inf", "+inf", "infinity"):
            return math.inf
        if s in ("-inf", "-infinity"):
            return -math.inf
    return float(v)


def _dump_bound(v: float):
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@dataclass(frozen=True)
class PearsonSpec:
    """Pearson target ``(b2, b1, b0, m, lo, hi)``.

    The normalizing constant is computed on construction.  Instances are
    immutable and hashable, so per-target caches key on them directly.
    """

    b2: float
    b1: float
    b0: float
    m: float
    lo: float = -math.inf
    hi: float = math.inf
    name: Optional[str] = field(default=None, compare=False)
    params: tuple = field(default=(), compare=False)
    norm_const: float = field(default=float("nan"), compare=False, repr=False)

    def __post_init__(self):
        for attr in ("b2", "b1", "b0", "m"):
            object.__setattr__(self, attr, float(getattr(self, attr)))
        object.__setattr__(self, "lo", _parse_bound(self.lo))
        object.__setattr__(self, "hi", _parse_bound(self.hi))
        if not self.lo < self.m < self.hi:
            raise ConfigurationError(f"mean m={self.m} must lie inside ({self.lo}, {self.hi})")
        if self.b(self.m) <= 0:
            raise ConfigurationError("b must be positive on the support")
        for r in self.b_roots():
            if self.lo < r < self.hi:
                raise ConfigurationError(f"b has a root {r} inside the support")
        c = quad(lambda x: math.exp(float(self._log_kernel(x))), self.lo, self.hi, points=[self.m])
        if not (c > 0 and math.isfinite(c)):
            raise ConfigurationError("normalizing integral did not converge")
        object.__setattr__(self, "norm_const", 1.0 / c)

    # -- coefficients -------------------------------------------------------
    @property
    def b_coeffs(self) -> tuple:
        """``(b0, b1, b2)`` in ascending order."""
        return (self.b0, self.b1, self.b2)

    def b(self, x):
        return horner(self.b_coeffs, x)

    def db(self, x):
        return 2.0 * self.b2 * np.asarray(x, dtype=float) + self.b1

    def drift(self, x):
        return 0.5 * (self.m - np.asarray(x, dtype=float))

    def b_roots(self) -> list:
        if self.b2 != 0.0:
            # stable quadratic formula; a subnormal b2 pushes one root to inf
            b2, b1, b0 = self.b2, self.b1, self.b0
            disc = b1 * b1 - 4.0 * b2 * b0
            if disc < 0:
                if -disc > 1e-14 * (b1 * b1 + abs(4.0 * b2 * b0)):
                    return []
                disc = 0.0
            q = -0.5 * (b1 + math.copysign(math.sqrt(disc), b1))
            if q == 0.0:
                return [0.0]
            with np.errstate(over="ignore"):
                r = [q / b2, b0 / q]
            return sorted(float(v) + 0.0 for v in r if math.isfinite(v))
        if self.b1 != 0.0:
            return [-self.b0 / self.b1]
        return []

    @property
    def support_lo(self) -> float:
        return self.lo

    @property
    def support_hi(self) -> float:
        return self.hi

    def inside(self, x):
        x = np.asarray(x, dtype=float)
        return (x > self.lo) & (x < self.hi)

    # -- density ------------------------------------------------------------
    def _int_inv_b(self, x):
        """Antiderivative of 1/b (any fixed branch; only differences are used)."""
        b2, b1, b0 = self.b2, self.b1, self.b0
        x = np.asarray(x, dtype=float)
        if b2 == 0.0:
            if b1 == 0.0:
                return x / b0
            return np.log(np.abs(b1 * x + b0)) / b1
        disc = b1 * b1 - 4.0 * b2 * b0
        if disc < 0.0:
            s = math.sqrt(-disc)
            return 2.0 / s * np.arctan((2.0 * b2 * x + b1) / s)
        if disc == 0.0:
            r = -b1 / (2.0 * b2)
            return -1.0 / (b2 * (x - r))
        r1, r2 = self.b_roots()
        return np.log(np.abs((x - r2) / (x - r1))) / (b2 * (r2 - r1))

    def _drift_ratio_integral(self, x):
        """Closed form of ``int_m^x (y - m) / b(y) dy``."""
        b2, b1, b0, m = self.b2, self.b1, self.b0, self.m
        x = np.asarray(x, dtype=float)
        if b2 == 0.0 and b1 == 0.0:
            return (x - m) ** 2 / (2.0 * b0)
        log_ratio = np.log(np.abs(self.b(x)) / abs(float(self.b(m))))
        if b2 == 0.0:
            shift = (m + b0 / b1) / b1
            return (x - m) / b1 - shift * log_ratio
        if abs(b2) < NEAR_LINEAR * max(abs(b1), abs(b0), 1.0):
            # the closed form cancels catastrophically as b2 -> 0
            f = lambda y: (y - m) / float(self.b(y))
            out = [quad(f, m, xv, epsrel=1e-13) if np.isfinite(xv) else math.inf
                   for xv in np.atleast_1d(x).ravel()]
            return np.asarray(out).reshape(x.shape)
        lin = m + b1 / (2.0 * b2)
        return log_ratio / (2.0 * b2) - lin * (self._int_inv_b(x) - self._int_inv_b(m))

    def _log_kernel(self, x):
        bx = self.b(x)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -np.log(bx) - self._drift_ratio_integral(x)
        return np.where(bx > 0.0, out, -np.inf)

    def log_pdf(self, x):
        """Log density; ``-inf`` outside the support. Vectorized."""
        x = np.asarray(x, dtype=float)
        inside = self.inside(x)
        safe = np.where(inside, x, self.m)
        out = np.where(inside, math.log(self.norm_const) + self._log_kernel(safe), -np.inf)
        return float(out) if out.ndim == 0 else out

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"b2": self.b2, "b1": self.b1, "b0": self.b0, "m": self.m,
             "lo": _dump_bound(self.lo), "hi": _dump_bound(self.hi)}
        if self.name:
            d["name"] = self.name
            d["params"] = list(self.params)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PearsonSpec":
        if "name" in d and d["name"] in BUILTINS and "b2" not in d:
            return builtin(d["name"], *d.get("params", []))
        return cls(d["b2"], d["b1"], d["b0"], d["m"], d.get("lo", "-inf"), d.get("hi", "inf"),
                   name=d.get("name"), params=tuple(d.get("params", ())))

    @classmethod
    def from_json(cls, s: str) -> "PearsonSpec":
        return cls.from_dict(json.loads(s))


# -- built-in targets ---------------------------------------------------------

def normal() -> PearsonSpec:
    """Standard normal: the Ornstein-Uhlenbeck target."""
    return PearsonSpec(0.0, 0.0, 1.0, 0.0, name="normal")


def gamma(alpha: float) -> PearsonSpec:
    """Gamma(alpha, 1): the CIR / Laguerre target, ``b(x) = x``."""
    return PearsonSpec(0.0, 1.0, 0.0, alpha, 0.0, math.inf, name="gamma", params=(float(alpha),))


def beta(a: float, b: float) -> PearsonSpec:
    """Beta(a, b) on (0, 1): the Jacobi target, ``b(x) = x (1 - x) / (a + b)``."""
    s = a + b
    return PearsonSpec(-1.0 / s, 1.0 / s, 0.0, a / s, 0.0, 1.0, name="beta",
                       params=(float(a), float(b)))


def student(nu: float) -> PearsonSpec:
    """Student t with ``nu > 1`` degrees of freedom; ``b > 0`` on the whole line."""
    if nu <= 1:
        raise ConfigurationError("student target needs nu > 1 for a finite mean")
    return PearsonSpec(1.0 / (nu - 1.0), 0.0, nu / (nu - 1.0), 0.0, name="student",
                       params=(float(nu),))


BUILTINS = {"normal": normal, "gamma": gamma, "beta": beta, "student": student}


def builtin(name: str, *params) -> PearsonSpec:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ConfigurationError(f"unknown built-in target {name!r}") from None
    return factory(*params)


# -- operations -----------------------------------------------------------------

def stationary_density(spec: PearsonSpec, x):
    """Stationary density ``p(x)``; zero outside the support. Vectorized."""
    out = np.exp(np.asarray(spec.log_pdf(x)))
    return float(out) if out.ndim == 0 else out


def stationary_cdf(spec: PearsonSpec, x: float) -> float:
    if x <= spec.lo:
        return 0.0
    if x >= spec.hi:
        return 1.0
    f = lambda w: stationary_density(spec, w)
    if x <= spec.m:
        return quad(f, spec.lo, x)
    return 1.0 - quad(f, x, spec.hi)


def rho1(spec: PearsonSpec) -> BRational:
    """``-(log p)' = ((2 b2 + 1) x + b1 - m) / b(x)``."""
    return BRational.make([spec.b1 - spec.m, 2.0 * spec.b2 + 1.0], 1, spec.b_coeffs)


@lru_cache(maxsize=None)
def derivative_ratio(spec: PearsonSpec, k: int) -> BRational:
    """``q_k = p^(k) / p`` as an exact rational function.

    ``q_0 = 1`` and ``q_{k+1} = q_k' + q_k (log p)'``.
    """
    if k < 0:
        raise ValueError("derivative order must be nonnegative")
    if k == 0:
        return BRational.make([1.0], 0, spec.b_coeffs)
    prev = derivative_ratio(spec, k - 1)
    return prev.derivative() - prev * rho1(spec)


def density_derivative(spec: PearsonSpec, x, k: int, k_max: int = K_MAX):
    """``p^(k)(x)``, zero outside the support."""
    if k > k_max:
        raise ConfigurationError(f"derivative order {k} exceeds k_max={k_max}")
    xs = np.asarray(x, dtype=float)
    out = np.zeros_like(xs)
    mask = spec.inside(xs)
    if np.any(mask):
        q = derivative_ratio(spec, k)
        out[mask] = q(xs[mask]) * stationary_density(spec, xs[mask])
    return float(out) if out.ndim == 0 else out


def check_drift_diffusion_relation(spec: PearsonSpec, grid) -> float:
    """Max over ``grid`` of ``|b(x) p(x) - 2 int_lo^x a(w) p(w) dw|``.

    With ``a(w) = (m - w)/2`` the integrand is ``(m - w) p(w)``.
    """
    f = lambda w: (spec.m - w) * stationary_density(spec, w)
    worst = 0.0
    for x in np.atleast_1d(np.asarray(grid, dtype=float)):
        if not spec.lo < x < spec.hi:
            raise DomainError(f"grid point {x} outside the support")
        # the two tails carry equal mass with opposite sign; integrate the shorter one
        if x <= spec.m:
            rhs = quad(f, spec.lo, x)
        else:
            rhs = -quad(f, x, spec.hi)
        lhs = float(spec.b(x)) * stationary_density(spec, x)
        worst = max(worst, abs(lhs - rhs))
    return worst


# -- general diffusions ---------------------------------------------------------

def _apply(f, y):
    """Call ``f`` on an array, falling back to elementwise calls for scalar-only callables."""
    y = np.asarray(y, dtype=float)
    try:
        out = np.asarray(f(y), dtype=float)
        if out.shape != y.shape:
            out = np.broadcast_to(out, y.shape).copy() if out.ndim == 0 else None
    except (TypeError, ValueError):
        out = None
    if out is None:
        out = np.vectorize(lambda v: float(f(float(v))), otypes=[float])(y)
    return float(out) if out.ndim == 0 else out


def _fd(f, x, order, h):
    # central stencils on 5 points
    fm2, fm1, f0, fp1, fp2 = (f(x + s * h) for s in (-2, -1, 0, 1, 2))
    if order == 1:
        return (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h)
    if order == 2:
        return (-fm2 + 16 * fm1 - 30 * f0 + 16 * fp1 - fp2) / (12 * h * h)
    raise ValueError("only first and second derivatives are supported")


@dataclass(frozen=True)
class GeneralDiffusionSpec:
    """A target given by a drift ``a`` and a density ``p`` on ``(lo, hi)``.

    ``b`` is induced by ``b p = int_lo^x 2 a p``.  Derivatives not supplied
    are taken by central finite differences.  An explicit ``b`` (with its
    derivatives) may be given to extend it outside the support, which the
    exterior envelope terms need.  All methods accept scalars or arrays.
    """

    drift: Callable[[float], float]
    density: Callable[[float], float]
    lo: float = -math.inf
    hi: float = math.inf
    mean: float = 0.0
    drift_prime: Optional[Callable] = None
    density_prime: Optional[Callable] = None
    density_second: Optional[Callable] = None
    diffusion: Optional[Callable] = None
    diffusion_prime: Optional[Callable] = None
    diffusion_second: Optional[Callable] = None

    def _inside(self, y):
        y = np.asarray(y, dtype=float)
        return (y > self.lo) & (y < self.hi)

    def a(self, y):
        return _apply(self.drift, y)

    def da(self, y):
        if self.drift_prime is not None:
            return _apply(self.drift_prime, y)
        y = np.asarray(y, dtype=float)
        return _fd(self.a, y, 1, 1e-4 * (1 + np.abs(y)))

    def p(self, y):
        y = np.asarray(y, dtype=float)
        inside = self._inside(y)
        out = np.where(inside, _apply(self.density, np.where(inside, y, self.mean)), 0.0)
        return float(out) if out.ndim == 0 else out

    def _logp(self, y):
        return np.log(_apply(self.density, y))

    def dlogp(self, y):
        if self.density_prime is not None:
            return _apply(self.density_prime, y) / self.p(y)
        y = np.asarray(y, dtype=float)
        return _fd(self._logp, y, 1, 1e-4 * (1 + np.abs(y)))

    def d2logp(self, y):
        if self.density_prime is not None and self.density_second is not None:
            p, dp = self.p(y), _apply(self.density_prime, y)
            return _apply(self.density_second, y) / p - (dp / p) ** 2
        y = np.asarray(y, dtype=float)
        return _fd(self._logp, y, 2, 1e-3 * (1 + np.abs(y)))

    def b(self, y):
        if self.diffusion is not None:
            return _apply(self.diffusion, y)
        return _apply(lambda v: induced_b(self, v), y)

    def db(self, y):
        if self.diffusion_prime is not None:
            return _apply(self.diffusion_prime, y)
        # (b p)' = 2 a p  =>  b' = 2 a - b (log p)'
        return 2.0 * self.a(y) - self.b(y) * self.dlogp(y)

    def d2b(self, y):
        if self.diffusion_second is not None:
            return _apply(self.diffusion_second, y)
        return 2.0 * self.da(y) - self.db(y) * self.dlogp(y) - self.b(y) * self.d2logp(y)

    def check(self, tol: float = 1e-8, grid=None) -> dict:
        """Report the standing assumptions; warns instead of rejecting.

        Checks unit mass, ``int a p = 0`` at ``tol``, and a single sign change
        of ``a`` (positive then negative) on ``grid``.
        """
        pf = lambda y: float(self.p(y))
        mass = quad(pf, self.lo, self.hi)
        mean_drift = quad(lambda y: float(self.a(y)) * pf(y), self.lo, self.hi)
        if grid is None:
            lo = self.lo if math.isfinite(self.lo) else self.mean - 50.0
            hi = self.hi if math.isfinite(self.hi) else self.mean + 50.0
            grid = np.linspace(lo, hi, 1001)[1:-1]
        signs = np.sign(self.a(np.asarray(grid, dtype=float)))
        signs = signs[signs != 0]
        reverting = bool(signs.size and signs[0] > 0 and signs[-1] < 0
                         and np.count_nonzero(np.diff(signs)) == 1)
        ok = abs(mean_drift) <= tol and abs(mass - 1.0) <= 1e-6 and reverting
        if not ok:
            warnings.warn(f"general diffusion assumptions not met: mass={mass}, "
                          f"int a p={mean_drift}, single sign change={reverting}",
                          RuntimeWarning, stacklevel=2)
        return {"mass": mass, "int_a_p": mean_drift, "sign_change": reverting, "ok": ok}

    @classmethod
    def from_pearson(cls, spec: PearsonSpec, explicit_b: bool = True) -> "GeneralDiffusionSpec":
        q1 = derivative_ratio(spec, 1)
        q2 = derivative_ratio(spec, 2)
        kw = {}
        if explicit_b:
            kw = dict(diffusion=spec.b, diffusion_prime=spec.db,
                      diffusion_second=lambda y: np.full_like(np.asarray(y, dtype=float), 2.0 * spec.b2))
        return cls(
            drift=spec.drift,
            density=lambda y: stationary_density(spec, y),
            lo=spec.lo, hi=spec.hi, mean=spec.m,
            drift_prime=lambda y: np.full_like(np.asarray(y, dtype=float), -0.5),
            density_prime=lambda y: density_derivative(spec, y, 1),
            density_second=lambda y: density_derivative(spec, y, 2),
            **kw,
        )


def induced_b(spec: GeneralDiffusionSpec, x: float) -> float:
    """``b(x) = int_lo^x 2 a(y) p(y) dy / p(x)`` by adaptive quadrature."""
    if not spec.lo < x < spec.hi:
        raise DomainError(f"x={x} outside the support")
    px = float(spec.p(x))
    if px < DENSITY_FLOOR:
        raise DomainError(f"density {px} below floor at x={x}")
    f = lambda y: float(spec.a(y)) * float(spec.p(y))
    # int a p vanishes over the support, so the right tail gives the same value
    # with less cancellation above the mean
    if x <= spec.mean:
        num = 2.0 * quad(f, spec.lo, x)
    else:
        num = -2.0 * quad(f, x, spec.hi)
    return num / px
