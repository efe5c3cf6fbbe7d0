"""The functions ``rho_k`` behind the density representations of Pearson laws.

For a Pearson target, ``p^(k)(x) = E[1{Z >= x} rho_{k+1}(Z)]`` for ``x`` in the
support, with ``rho_{k+1} = N_{k+1} / b^{k+1}``.  Two independent evaluation
paths are provided:

* :func:`build_rho_table` fills the numerator coefficients level by level
  from the closed recursion on ``c^k_j``;
* :func:`rho_via_symbolic` differentiates exact rational functions through
  ``rho_{k+1} = -rho_k (x - m + b') / b + rho_k'``.

The second path is the reference the first is checked against.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, DomainError
from .pearson_family import (
    DENSITY_FLOOR,
    PearsonSpec,
    density_derivative,
    quad,
    rho1,
    stationary_density,
)
from .rational import BRational


@dataclass(frozen=True)
class RhoTable:
    """Triangular coefficient array; ``coeffs[k][j]`` is ``c^k_j`` (row 0 unused)."""

    spec: PearsonSpec
    k_max: int
    coeffs: tuple

    def c(self, k: int, j: int) -> float:
        if j < 0 or j > k or k < 1 or k >= len(self.coeffs):
            return 0.0
        return self.coeffs[k][j]

    def numerator(self, k: int) -> np.ndarray:
        return np.asarray(self.coeffs[k], dtype=float)

    def rows(self):
        """``(k, j, c^k_j)`` triples in table order."""
        for k in range(1, len(self.coeffs)):
            for j, v in enumerate(self.coeffs[k]):
                yield k, j, v

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "j", "c"])
            for k, j, v in self.rows():
                w.writerow([k, j, repr(float(v))])


def _next_row(prev: list, k: int, spec: PearsonSpec) -> list:
    b2, b1, b0, m = spec.b2, spec.b1, spec.b0, spec.m

    def c(j):
        return prev[j] if 0 <= j <= k else 0.0

    return [
        c(j) * (m + b1 * (j - k - 1)) - c(j - 1) * ((2 * k + 3 - j) * b2 + 1.0) + b0 * (j + 1) * c(j + 1)
        for j in range(k + 2)
    ]


def build_rho_table(spec: PearsonSpec, k_max: int) -> RhoTable:
    """Coefficients of ``rho_1 .. rho_{k_max+1}``.

    Level ``k+1`` is computed from level ``k``; the base level is
    ``c^1_1 = 2 b2 + 1``, ``c^1_0 = b1 - m``.
    """
    if k_max < 0:
        raise ConfigurationError("k_max must be nonnegative")
    rows = [(), (spec.b1 - spec.m, 2.0 * spec.b2 + 1.0)]
    for k in range(1, k_max + 1):
        rows.append(tuple(_next_row(list(rows[k]), k, spec)))
    return RhoTable(spec, k_max, tuple(rows))


def rho(table: RhoTable, k: int, x):
    """``rho_k(x)`` from the coefficient table, ``1 <= k <= k_max + 1``."""
    if not 1 <= k <= table.k_max + 1:
        raise ConfigurationError(f"k={k} outside 1..{table.k_max + 1}")
    return BRational.make(table.numerator(k), k, table.spec.b_coeffs)(x)


@lru_cache(maxsize=None)
def rho_symbolic(spec: PearsonSpec, k: int) -> BRational:
    """``rho_k`` as an exact rational function from the derivative recursion."""
    if k < 1:
        raise ConfigurationError("rho is indexed from 1")
    r = rho1(spec)
    if k == 1:
        return r
    prev = rho_symbolic(spec, k - 1)
    return prev.derivative() - prev * r


def rho_via_symbolic(spec: PearsonSpec, k: int, x):
    return rho_symbolic(spec, k)(x)


# -- general densities ----------------------------------------------------------

def _fornberg_weights(offsets: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights at 0 for the given stencil offsets."""
    n = len(offsets)
    c = np.zeros((n, order + 1))
    c1, c4 = 1.0, offsets[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, order)
        c2, c5 = 1.0, c4
        c4 = offsets[i]
        for j in range(i):
            c3 = offsets[i] - offsets[j]
            c2 *= c3
            if j == i - 1:
                for s in range(mn, 0, -1):
                    c[i, s] = c1 * (s * c[i - 1, s - 1] - c5 * c[i - 1, s]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for s in range(mn, 0, -1):
                c[j, s] = (c4 * c[j, s] - s * c[j, s - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def finite_difference(f, x: float, order: int, points: int | None = None) -> float:
    """Central finite-difference derivative of ``f`` at ``x``.

    The step is ``eps^(1/(order+3)) (1 + |x|)``; at least five points are used.
    """
    if order == 0:
        return float(f(x))
    npts = points or max(5, order + 3 + (order + 3) % 2)
    if npts % 2 == 0:
        npts += 1
    h = np.finfo(float).eps ** (1.0 / (order + 3)) * (1.0 + abs(x))
    offs = np.arange(npts) - npts // 2
    w = _fornberg_weights(offs.astype(float), order)
    vals = np.array([f(x + o * h) for o in offs], dtype=float)
    return float(w @ vals) / h**order


def h_general(p_fn, k: int, x: float, derivatives=None) -> float:
    """``h_k(x) = -p^(k+1)(x) / p(x)`` for a general density.

    ``derivatives`` may map an order ``j`` to a callable for ``p^(j)``;
    missing orders fall back to finite differences of ``p_fn``.
    """
    px = float(p_fn(x))
    if px <= DENSITY_FLOOR:
        raise DomainError(f"density {px} at x={x} is below the floor")
    order = k + 1
    if derivatives is not None and order in derivatives:
        d = float(derivatives[order](x))
    else:
        d = finite_difference(p_fn, x, order)
    return -d / px


def representation_residual(table: RhoTable, k: int, x: float) -> float:
    """``|p^(k)(x) - int_x^u rho_{k+1} p|``; for ``x <= lo`` the lower branch is used."""
    spec = table.spec
    r = BRational.make(table.numerator(k + 1), k + 1, spec.b_coeffs)
    f = lambda w: float(r(w)) * stationary_density(spec, w)
    if x <= spec.lo:
        # E[1{Z < x} rho_{k+1}(Z)] vanishes identically, as does p^(k)(x)
        return 0.0
    if x >= spec.hi:
        return 0.0
    lhs = density_derivative(spec, x, k, k_max=max(k, 6))
    rhs = quad(f, x, spec.hi, epsrel=1e-12, epsabs=1e-14)
    return abs(lhs - rhs)
