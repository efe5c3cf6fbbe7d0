"""Euler-type simulation of Pearson and general one-dimensional diffusions.

The scheme steps

    z <- z + a(z) dt + sqrt(max(0, b(z) 1{z in (lo, hi)})) sqrt(dt) xi

and records the ensemble at the requested times.  Paths are simulated in
fixed blocks, each with its own counter-based stream, so an ensemble is
bit-identical for any number of worker threads.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigurationError, UnsupportedError
from .pearson_family import GeneralDiffusionSpec, PearsonSpec
from .rng import run_blocks, stream

SCHEMES = ("euler_maruyama", "full_truncation_euler")
POLICIES = ("clamp_with_indicator", "reflect")


def default_scheme(spec) -> str:
    """Full truncation when ``b`` vanishes at a finite endpoint (CIR, Jacobi)."""
    if isinstance(spec, PearsonSpec):
        for end in (spec.lo, spec.hi):
            if math.isfinite(end) and abs(float(spec.b(end))) < 1e-12:
                return "full_truncation_euler"
    return "euler_maruyama"


@dataclass(frozen=True)
class SimConfig:
    t_grid: tuple
    n_paths: int
    seed: int
    dt: float = 1e-3
    boundary_policy: str = "clamp_with_indicator"
    scheme: Optional[str] = None
    noise: bool = True
    block_size: int = 8192
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "t_grid", tuple(float(t) for t in self.t_grid))
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be at least 1")
        if not self.t_grid or any(t < 0 for t in self.t_grid):
            raise ConfigurationError("t_grid must be a nonempty list of nonnegative times")
        if any(b <= a for a, b in zip(self.t_grid, self.t_grid[1:])):
            raise ConfigurationError("t_grid must be increasing")
        if self.dt <= 0:
            raise ConfigurationError("dt must be positive")
        if self.boundary_policy not in POLICIES:
            raise ConfigurationError(f"boundary_policy must be one of {POLICIES}")
        if self.scheme is not None and self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        gaps = np.diff(np.concatenate([[0.0], self.t_grid]))
        gaps = gaps[gaps > 0]
        if gaps.size and self.dt > gaps.min() * (1 + 1e-9):
            raise ConfigurationError("dt exceeds the smallest spacing of t_grid")
        steps = np.asarray(self.t_grid) / self.dt
        if np.any(np.abs(steps - np.round(steps)) > 1e-6):
            raise ConfigurationError("every time in t_grid must be a multiple of dt")

    def step_counts(self) -> np.ndarray:
        return np.round(np.asarray(self.t_grid) / self.dt).astype(np.int64)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["t_grid"] = list(self.t_grid)
        return d


@dataclass
class Ensemble:
    """Path values at ``t_grid``; rows are paths, columns are times."""

    t_grid: np.ndarray
    values: np.ndarray
    spec: object = field(repr=False)
    config: SimConfig = field(repr=False)
    n_flagged: int = 0

    def at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.t_grid - t)))
        if abs(self.t_grid[idx] - t) > 1e-9:
            raise KeyError(f"t={t} not on the grid")
        return self.values[:, idx]

    def summary(self, quantiles: Sequence[float] = (0.05, 0.25, 0.5, 0.75, 0.95)) -> dict:
        v = self.values
        return {
            "n_paths": int(v.shape[0]),
            "n_flagged": int(self.n_flagged),
            "t": [float(t) for t in self.t_grid],
            "mean": [float(x) for x in v.mean(axis=0)],
            "var": [float(x) for x in v.var(axis=0, ddof=1)] if v.shape[0] > 1 else [0.0] * v.shape[1],
            "quantiles": {str(q): [float(x) for x in np.quantile(v, q, axis=0)] for q in quantiles},
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "path_id", "value"])
            for j, t in enumerate(self.t_grid):
                for i, val in enumerate(self.values[:, j]):
                    w.writerow([repr(float(t)), i, repr(float(val))])

    def summary_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _coefficients(spec):
    if isinstance(spec, PearsonSpec):
        return spec.drift, spec.b, spec.lo, spec.hi
    if isinstance(spec, GeneralDiffusionSpec):
        if spec.diffusion is None:
            raise ConfigurationError("simulating a general diffusion needs an explicit b")
        return spec.a, spec.b, spec.lo, spec.hi
    raise ConfigurationError("unknown target type")


def _simulate_block(spec, z0: np.ndarray, config: SimConfig, block: int) -> np.ndarray:
    drift, bfun, lo, hi = _coefficients(spec)
    scheme = config.scheme or default_scheme(spec)
    rng = stream(config.seed, block)
    n = z0.size
    z = z0.astype(float).copy()
    steps = config.step_counts()
    out = np.empty((n, steps.size))
    dt, sdt = config.dt, math.sqrt(config.dt)
    bounded = math.isfinite(lo) or math.isfinite(hi)
    j = 0
    for s in range(int(steps[-1]) + 1):
        while j < steps.size and steps[j] == s:
            out[:, j] = z
            j += 1
        if s == steps[-1]:
            break
        if scheme == "full_truncation_euler":
            bz = bfun(np.clip(z, lo, hi))
        else:
            bz = np.where((z > lo) & (z < hi), bfun(z), 0.0)
        dz = drift(z) * dt
        if config.noise:
            dz = dz + np.sqrt(np.maximum(bz, 0.0)) * sdt * rng.standard_normal(n)
        z = z + dz
        if bounded:
            if config.boundary_policy == "reflect":
                z = np.where(z < lo, 2 * lo - z, z)
                z = np.where(z > hi, 2 * hi - z, z)
            z = np.clip(z, lo, hi)
    return out


def simulate(spec, z0: Union[float, np.ndarray], config: SimConfig) -> Ensemble:
    """Simulate ``config.n_paths`` paths from ``z0`` (scalar or one value per path)."""
    z0 = np.asarray(z0, dtype=float)
    if z0.ndim == 0:
        z0 = np.full(config.n_paths, float(z0))
    if z0.shape != (config.n_paths,):
        raise ConfigurationError("z0 must be a scalar or have one entry per path")
    lo, hi = spec.lo, spec.hi
    b_pos_everywhere = isinstance(spec, PearsonSpec) and not spec.b_roots() and spec.b2 >= 0
    if not b_pos_everywhere and np.any((z0 < lo) | (z0 > hi)):
        raise ConfigurationError("z0 must lie in the closure of the support")
    parts = run_blocks(lambda i, a, b: _simulate_block(spec, z0[a:b], config, i),
                       config.n_paths, config.block_size, config.workers)
    values = np.concatenate(parts, axis=0)
    good = np.all(np.isfinite(values), axis=1)
    return Ensemble(np.asarray(config.t_grid), values[good], spec, config, int(np.sum(~good)))


def stationary_sample(spec: PearsonSpec, n: int, seed: int) -> np.ndarray:
    """Exact i.i.d. draws from a built-in stationary law."""
    rng = stream(seed, 0)
    name, params = getattr(spec, "name", None), getattr(spec, "params", ())
    if name == "normal":
        return rng.standard_normal(n)
    if name == "gamma":
        return rng.gamma(params[0], 1.0, n)
    if name == "beta":
        return rng.beta(params[0], params[1], n)
    if name == "student":
        return rng.standard_t(params[0], n)
    raise UnsupportedError("exact sampling is only available for the built-in families")
