"""Weighted sums of i.i.d. Gamma variables in the first Laguerre chaos.

With ``Y_i ~ Gamma(gamma, 1)`` and weights ``lambda_1 >= ... >= lambda_k > 0``,

    X = sum lambda_i (Y_i - gamma),   F = X + alpha.

Under the Laguerre generator ``Gamma(Y_i) = Y_i`` and ``Gamma(Y_i, Y_j) = 0``
for ``i != j``, so every functional used by the density bounds has a closed
form: ``Gamma(X) = sum lambda_i^2 Y_i``, ``Q1 = Gamma(X) - F``,
``L Q1 = -sum (lambda_i^2 - lambda_i)(Y_i - gamma)`` and
``Q2 = Gamma(F, Q1) = sum lambda_i (lambda_i^2 - lambda_i) Y_i``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .rng import run_blocks, stream

# Each Y_i - gamma is an eigenfunction of L with eigenvalue -1.
GRADE = 1
FIELDS = ("X", "F", "gamma_carre", "Q1", "LQ1", "Q2")
BLOCK_SIZE = 1 << 15


@dataclass(frozen=True)
class WeightedGammaSpec:
    """``X = sum lambda_i (Y_i - gamma)`` aimed at the ``Gamma(alpha, 1)`` law."""

    gamma_shape: float
    weights: tuple
    target_alpha: float

    def __post_init__(self):
        w = tuple(float(v) for v in np.atleast_1d(np.asarray(self.weights, dtype=float)))
        object.__setattr__(self, "weights", w)
        if not (self.gamma_shape > 0 and math.isfinite(self.gamma_shape)):
            raise ConfigurationError("gamma_shape must be positive and finite")
        if not (self.target_alpha > 0 and math.isfinite(self.target_alpha)):
            raise ConfigurationError("target_alpha must be positive and finite")
        if not w:
            raise ConfigurationError("at least one weight is required")
        if not all(math.isfinite(v) and v > 0 for v in w):
            raise ConfigurationError("weights must be finite and strictly positive")
        if any(a < b for a, b in zip(w, w[1:])):
            raise ConfigurationError("weights must be sorted in descending order")

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.weights)

    @property
    def k(self) -> int:
        return len(self.weights)

    def variance_mismatch(self) -> float:
        """``Var(X) - Var(Gamma(alpha)) = gamma sum lambda^2 - alpha``."""
        return self.gamma_shape * float(np.sum(self.lam**2)) - self.target_alpha

    def to_dict(self) -> dict:
        return {"gamma": self.gamma_shape, "alpha": self.target_alpha, "weights": list(self.weights)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "WeightedGammaSpec":
        try:
            return cls(float(d["gamma"]), tuple(d["weights"]), float(d["alpha"]))
        except KeyError as exc:
            raise ConfigurationError(f"missing key {exc} in weighted-gamma spec") from None

    @classmethod
    def from_json(cls, s: str) -> "WeightedGammaSpec":
        return cls.from_dict(json.loads(s))


@dataclass
class ChaosSample:
    """A batch of draws; fields that were not requested are ``None``."""

    X: Optional[np.ndarray] = None
    F: Optional[np.ndarray] = None
    gamma_carre: Optional[np.ndarray] = None
    Q1: Optional[np.ndarray] = None
    LQ1: Optional[np.ndarray] = None
    Q2: Optional[np.ndarray] = None
    Y: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        for name in FIELDS:
            v = getattr(self, name)
            if v is not None:
                return len(v)
        return 0 if self.Y is None else self.Y.shape[0]

    def to_csv(self, path) -> None:
        cols = [name for name in FIELDS if getattr(self, name) is not None]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(getattr(self, c) for c in cols)):
                w.writerow([repr(float(v)) for v in row])


def _check_fields(fields) -> tuple:
    fields = tuple(fields)
    bad = [f for f in fields if f not in FIELDS]
    if bad:
        raise ConfigurationError(f"unknown sample fields {bad}; choose from {FIELDS}")
    return fields


def _derive(spec: WeightedGammaSpec, Y: np.ndarray, fields) -> dict:
    assert GRADE == 1
    lam = spec.lam
    g = spec.gamma_shape
    centred = Y - g
    out = {}
    X = centred @ lam
    gc = Y @ lam**2
    if "X" in fields:
        out["X"] = X
    if "F" in fields:
        out["F"] = X + spec.target_alpha
    if "gamma_carre" in fields:
        out["gamma_carre"] = gc
    if "Q1" in fields:
        out["Q1"] = gc - (X + spec.target_alpha)
    if "LQ1" in fields:
        out["LQ1"] = -(centred @ (lam**2 - lam))
    if "Q2" in fields:
        out["Q2"] = Y @ (lam * (lam**2 - lam))
    return out


def _draw(rng: np.random.Generator, shape: float, size: int, k: int) -> np.ndarray:
    # column by column, so the first j columns do not depend on k
    Y = np.empty((size, k))
    for i in range(k):
        Y[:, i] = rng.standard_gamma(shape, size)
    return Y


def _concat(parts: list, names) -> dict:
    return {n: np.concatenate([p[n] for p in parts]) for n in names}


def sample(spec: WeightedGammaSpec, n_samples: int, seed: int, fields: Sequence[str] = FIELDS,
           keep_y: bool = False, block_size: int = BLOCK_SIZE, workers: int = 1) -> ChaosSample:
    """Draw ``n_samples`` realisations and the derived chaos functionals.

    Blocks of ``block_size`` samples use independent Philox streams keyed by
    ``(seed, block)``; the output does not depend on ``workers``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be positive")
    fields = _check_fields(fields)

    def block(i, start, stop):
        Y = _draw(stream(seed, i), spec.gamma_shape, stop - start, spec.k)
        d = _derive(spec, Y, fields)
        if keep_y:
            d["Y"] = Y
        return d

    parts = run_blocks(block, n_samples, block_size, workers)
    names = list(fields) + (["Y"] if keep_y else [])
    return ChaosSample(**_concat(parts, names))


def sample_nested(specs: Sequence[WeightedGammaSpec], n_samples: int, seed: int,
                  fields: Sequence[str] = ("F", "Q1"), block_size: int = BLOCK_SIZE,
                  workers: int = 1) -> list:
    """Samples for several specs driven by the same ``Y`` draws.

    Spec ``j`` uses the first ``specs[j].k`` Gamma variables, so a schedule of
    growing truncations shares common random numbers.  All specs must have the
    same ``gamma_shape``.  Each spec's sample equals ``sample(spec, ...)`` with
    the same seed.
    """
    if not specs:
        return []
    shapes = {s.gamma_shape for s in specs}
    if len(shapes) != 1:
        raise ConfigurationError("nested sampling needs a common gamma_shape")
    fields = _check_fields(fields)
    k_max = max(s.k for s in specs)
    shape = shapes.pop()

    def block(i, start, stop):
        Y = _draw(stream(seed, i), shape, stop - start, k_max)
        return [_derive(s, Y[:, : s.k], fields) for s in specs]

    parts = run_blocks(block, n_samples, block_size, workers)
    return [ChaosSample(**_concat([p[j] for p in parts], fields)) for j in range(len(specs))]


# -- closed forms ------------------------------------------------------------------

def e_q1_sq(spec: WeightedGammaSpec) -> float:
    """``E[Q1^2] = gamma sum (lambda^2 - lambda)^2 + (gamma sum lambda^2 - alpha)^2``."""
    lam = spec.lam
    return spec.gamma_shape * float(np.sum((lam**2 - lam) ** 2)) + spec.variance_mismatch() ** 2


def e_lq1_sq(spec: WeightedGammaSpec) -> float:
    """``E[(L Q1)^2] = gamma sum (lambda^2 - lambda)^2``."""
    lam = spec.lam
    return spec.gamma_shape * float(np.sum((lam**2 - lam) ** 2))


def elementary_symmetric(values, q_max: int) -> np.ndarray:
    """``e_0 .. e_{q_max}`` of ``values`` by the product recurrence.

    Values are folded in descending magnitude; entries past ``len(values)``
    are zero.
    """
    v = np.asarray(values, dtype=float).ravel()
    v = v[np.argsort(-np.abs(v), kind="stable")]
    e =np.zeros(q_max + 1)
    e[0] = 1.0
    for i, x in enumerate(v):
        top = min(i + 1, q_max)
        e[1: top + 1] = e[1: top + 1] + x * e[:top]
    return e


def spectral_sums(spec: WeightedGammaSpec, q_max: int) -> tuple:
    """``(R, S)`` with ``R[q] = q! e_q(lambda^2)`` and ``S[q] = q! e_q(lambda)``, ``q = 0..q_max``."""
    if q_max < 0:
        raise ConfigurationError("q_max must be nonnegative")
    if q_max > spec.k:
        raise ConfigurationError(f"q_max={q_max} exceeds the weight count {spec.k}")
    fact = np.array([math.factorial(q) for q in range(q_max + 1)], dtype=float)
    R = fact * elementary_symmetric(spec.lam**2, q_max)
    S = fact * elementary_symmetric(spec.lam, q_max)
    return R, S


def m_product(spec: WeightedGammaSpec, q: int) -> float:
    """``(alpha/2) prod_{r=1..q} (alpha/2 - sum_{j <= min(r, k)} lambda_j^2)``."""
    if q < 1:
        raise ConfigurationError("q must be at least 1")
    half = spec.target_alpha / 2.0
    partial = np.cumsum(spec.lam**2)
    out = half
    for r in range(1, q + 1):
        out *= half - partial[min(r, spec.k) - 1]
    return float(out)


def negative_moment_bound(spec: WeightedGammaSpec, q: float, use: str = "R",
                          form: str = "laplace") -> float:
    """Upper bound on ``E[Gamma(X)^-q]`` (``use="R"``) or ``E[F^-q]`` (``use="S"``).

    From ``x^-q = Gamma(q)^-1 int_0^inf t^(q-1) e^(-tx) dt`` and
    ``prod (1 + t v_i) >= t^r e_r(v)`` on ``t < 1`` (``r = 1``) and ``t >= 1``
    (``r = p + 1``)::

        (1/Gamma(q)) [1/((q - gamma) e_1^gamma) + 1/((gamma (p+1) - q) e_{p+1}^gamma)]

    with ``p`` the smallest integer in ``(q/gamma - 1, alpha/gamma)``.

    ``form="printed"`` evaluates the variant with ``1/(2 (q-1)!)`` and
    ``R_q = q! e_q`` in place of ``e_q``; it is smaller and not guaranteed to
    dominate.

    The ``S`` bound is valid when ``F = sum lambda_i Y_i + (alpha - gamma sum lambda)``
    has a nonnegative shift; otherwise ``F`` can be negative and ``inf`` is
    returned.  ``inf`` is also returned when fewer than ``p + 1`` weights exist.
    """
    g, a = spec.gamma_shape, spec.target_alpha
    if use not in ("R", "S"):
        raise ConfigurationError("use must be 'R' or 'S'")
    if form not in ("laplace", "printed"):
        raise ConfigurationError("form must be 'laplace' or 'printed'")
    if not g < q < a:
        raise DomainError(f"need gamma < q < alpha, got gamma={g}, q={q}, alpha={a}")
    p = math.floor(q / g - 1.0) + 1
    p = max(p, 0)
    if not p < a / g:
        raise DomainError(f"alpha too small for this q (q={q}, alpha={a}, gamma={g})")
    if use == "S" and a - g * float(np.sum(spec.lam)) < 0:
        warnings.warn("F can be negative; the S-sum bound does not apply", RuntimeWarning)
        return math.inf
    if p + 1 > spec.k:
        return math.inf
    v = spec.lam**2 if use == "R" else spec.lam
    e = elementary_symmetric(v, p + 1)
    e1, ep = e[1], e[p + 1]
    if form == "printed":
        e1, ep = e1, ep * math.factorial(p + 1)
        lead = 1.0 / (2.0 * math.gamma(q))
    else:
        lead = 1.0 / math.gamma(q)
    return lead * (1.0 / ((q - g) * e1**g) + 1.0 / ((g * (p + 1) - q) * ep**g))


def charfun(spec: WeightedGammaSpec, t, of: str = "gamma_carre"):
    """Characteristic function of ``Gamma(X)`` or ``F`` at real ``t``."""
    t = np.asarray(t, dtype=float)
    g = spec.gamma_shape
    if of == "gamma_carre":
        v, phase = spec.lam**2, 0.0
    elif of == "F":
        v, phase = spec.lam, spec.target_alpha - g * float(np.sum(spec.lam))
    else:
        raise ConfigurationError("of must be 'gamma_carre' or 'F'")
    logs = np.log1p(-1j * np.multiply.outer(t, v)).sum(axis=-1)
    out = np.exp(-g * logs + 1j * t * phase)
    return out if out.ndim else complex(out)


# -- four-moment functional ----------------------------------------------------------

def _wv_polys(b2, b1, b0, m):
    P = np.polynomial.Polynomial
    if b2 >= 1:
        raise ConfigurationError("four_moment_M needs b2 < 1")
    if b2 == 0.5:
        raise ConfigurationError("W is undefined for b2 = 1/2")
    W = P([(b0 + m * (b1 + m) / (2 * b2 - 1)) / (b2 - 1), 2 * (b1 + m) / (2 * b2 - 1), 1.0])
    V = (1 - b2) * W**2 - (1.0 / 12.0) * W.deriv() ** 3 * P([-m, 1.0])
    return W, V


def _expect(poly, mu) -> float:
    c = poly.coef
    moments = np.concatenate([[1.0], mu])
    return float(np.dot(c, moments[: len(c)]))


def four_moment_M(mu, q: float, target) -> float:
    """``M(q)`` from the first four moments ``mu = (E F, E F^2, E F^3, E F^4)``.

    ``target`` is a :class:`~pearson_stein.pearson_family.PearsonSpec` or a
    ``(b2, b1, b0, m)`` tuple.
    """
    mu = np.asarray(mu, dtype=float).ravel()
    if mu.size != 4:
        raise ConfigurationError(f"expected 4 moments, got {mu.size}")
    if not q > 0:
        raise ConfigurationError("chaos grade q must be positive")
    if hasattr(target, "b2"):
        b2, b1, b0, m = target.b2, target.b1, target.b0, target.m
    else:
        b2, b1, b0, m = target
    W, V = _wv_polys(b2, b1, b0, m)
    out = 2.0 * (1 - b2 - q / 4.0) * _expect(V, mu)
    if q > 2 * (1 - b2):
        out += (q - 2 * (1 - b2)) * (1 - b2) / 2.0 * _expect(W**2, mu)
    return out


def gamma_moments(alpha: float) -> np.ndarray:
    """Raw moments ``E[G^j] = alpha (alpha+1) ... (alpha+j-1)``, ``j = 1..4``."""
    return np.cumprod(alpha + np.arange(4.0))


def exact_moments(spec: WeightedGammaSpec) -> np.ndarray:
    """Raw moments of ``F`` from its cumulants ``kappa_j = gamma (j-1)! sum lambda^j``."""
    lam, g = spec.lam, spec.gamma_shape
    k1 = spec.target_alpha
    k2 = g * np.sum(lam**2)
    k3 = 2 * g * np.sum(lam**3)
    k4 = 6 * g * np.sum(lam**4)
    m1 = k1
    m2 = k2 + k1**2
    m3 = k3 + 3 * k2 * k1 + k1**3
    m4 = k4 + 4 * k3 * k1 + 3 * k2**2 + 6 * k2 * k1**2 + k1**4
    return np.array([m1, m2, m3, m4], dtype=float)


# -- weight families ------------------------------------------------------------------

def _normalised(raw: np.ndarray, gamma_shape: float, alpha: float) -> WeightedGammaSpec:
    c = math.sqrt(alpha / (gamma_shape * float(np.sum(raw**2))))
    return WeightedGammaSpec(gamma_shape, tuple(c * raw), alpha)


def harmonic_weights(n: int, gamma_shape: float, alpha: float) -> WeightedGammaSpec:
    """``lambda_i = c_n / i``, ``i <= n``, with ``gamma sum lambda^2 = alpha``."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    return _normalised(1.0 / np.arange(1, n + 1), gamma_shape, alpha)


def geometric_weights(n: int, gamma_shape: float, alpha: float, ratio: float = 0.5) -> WeightedGammaSpec:
    """``lambda_i = c_n ratio^(i-1)``, normalised like :func:`harmonic_weights`."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    if not 0 < ratio <= 1:
        raise ConfigurationError("ratio must lie in (0, 1]")
    return _normalised(ratio ** np.arange(n, dtype=float), gamma_shape, alpha)


def equal_tail_weights(n: int, gamma_shape: float, alpha: float) -> WeightedGammaSpec:
    """``n0 = alpha/gamma`` unit weights followed by ``n - n0`` equal weights ``1/n``.

    The tail vanishes as ``n`` grows and ``F`` tends to ``Gamma(alpha)``;
    ``alpha/gamma`` must be an integer and ``n > n0``.
    """
    ratio = alpha / gamma_shape
    n0 = int(round(ratio))
    if abs(ratio - n0) > 1e-12 or n0 < 1:
        raise ConfigurationError("equal-tail weights need alpha/gamma to be a positive integer")
    if n <= n0:
        raise ConfigurationError(f"n must exceed alpha/gamma = {n0}")
    raw = np.concatenate([np.ones(n0), np.full(n - n0, 1.0 / n)])
    return _normalised(raw, gamma_shape, alpha)


WEIGHT_FAMILIES = {
    "harmonic": harmonic_weights,
    "geometric": geometric_weights,
    "equal-tail": equal_tail_weights,
}


def weight_family(name: str, n: int, gamma_shape: float, alpha: float, **kw) -> WeightedGammaSpec:
    try:
        fn = WEIGHT_FAMILIES[name]
    except KeyError:
        raise ConfigurationError(f"unknown weight family {name!r}; choose from {sorted(WEIGHT_FAMILIES)}") from None
    return fn(n, gamma_shape, alpha, **kw)
