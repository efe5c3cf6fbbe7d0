"""Rational functions of the form ``N(x) / b(x)**p`` with ``b`` quadratic.

Every quantity in the density-representation machinery for Pearson targets
(the ratios ``p^(k)/p`` and the functions ``rho_k``) lives in this class, so
they are kept as an exact numerator coefficient array plus an integer power
of ``b`` instead of being differentiated numerically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import PoleError


def _trim(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.size == 0:
        return np.zeros(1)
    nz = np.nonzero(c)[0]
    if nz.size == 0:
        return np.zeros(1)
    return c[: nz[-1] + 1].copy()


def horner(coeffs, x):
    """Evaluate ``sum coeffs[j] x**j`` by Horner's rule (ascending order)."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c in coeffs[::-1]:
        out = out * x + c
    return out


@dataclass(frozen=True)
class BRational:
    """``num(x) / b(x)**power`` with ``num`` in ascending coefficient order."""

    num: tuple
    power: int
    b: tuple  # (b0, b1, b2), ascending

    @classmethod
    def make(cls, num, power, b) -> "BRational":
        return cls(tuple(_trim(num)), int(power), tuple(float(v) for v in b))

    @property
    def num_array(self) -> np.ndarray:
        return np.asarray(self.num, dtype=float)

    @property
    def b_array(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)

    def _lift(self, power: int) -> np.ndarray:
        """Numerator rewritten over ``b**power`` (power >= self.power)."""
        num = self.num_array
        for _ in range(power - self.power):
            num = P.polymul(num, self.b_array)
        return num

    def __add__(self, other: "BRational") -> "BRational":
        p = max(self.power, other.power)
        return BRational.make(P.polyadd(self._lift(p), other._lift(p)), p, self.b)

    def __neg__(self) -> "BRational":
        return BRational.make(-self.num_array, self.power, self.b)

    def __sub__(self, other: "BRational") -> "BRational":
        return self + (-other)

    def __mul__(self, other: "BRational") -> "BRational":
        return BRational.make(
            P.polymul(self.num_array, other.num_array), self.power + other.power, self.b
        )

    def derivative(self) -> "BRational":
        # (N / b^p)' = (N' b - p N b') / b^(p+1)
        num = self.num_array
        b = self.b_array
        if self.power == 0:
            return BRational.make(P.polyder(num), 0, self.b)
        top = P.polysub(P.polymul(P.polyder(num), b), self.power * P.polymul(num, P.polyder(b)))
        return BRational.make(top, self.power + 1, self.b)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        top = horner(self.num_array, x)
        if self.power == 0:
            return top
        bx = horner(self.b_array, x)
        if np.any(bx == 0.0):
            raise PoleError("rational function evaluated at a root of b")
        return top / bx**self.power

    def normalized(self, power: int) -> np.ndarray:
        """Numerator coefficients over ``b**power``; ``power`` must not be smaller."""
        if power < self.power:
            raise ValueError("cannot lower the power of b")
        return self._lift(power)
