import json
import math

import numpy as np
import pytest

from pearson_stein import pearson_family as pf
from pearson_stein.diffusion_sim import (
    SimConfig,
    default_scheme,
    simulate,
    stationary_sample,
)
from pearson_stein.errors import ConfigurationError, UnsupportedError


def _euler_ou_var(dt, t):
    # z <- (1 - dt/2) z + sqrt(dt) xi from a point mass
    r = 1 - dt / 2
    n = round(t / dt)
    return dt * (1 - r ** (2 * n)) / (1 - r * r)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        SimConfig((1.0, 0.5), 10, 0)
    with pytest.raises(ConfigurationError):
        SimConfig((0.5,), 10, 0, dt=1.0)
    with pytest.raises(ConfigurationError):
        SimConfig((0.15,), 10, 0, dt=0.1)
    with pytest.raises(ConfigurationError):
        SimConfig((1.0,), 0, 0)
    with pytest.raises(ConfigurationError):
        SimConfig((1.0,), 10, 0, boundary_policy="absorb")
    with pytest.raises(ConfigurationError):
        SimConfig((1.0,), 10, 0, scheme="milstein")


def test_default_scheme():
    assert default_scheme(pf.normal()) == "euler_maruyama"
    assert default_scheme(pf.gamma(3.0)) == "full_truncation_euler"
    assert default_scheme(pf.beta(2.0, 3.0)) == "full_truncation_euler"


def test_z0_outside_support_rejected():
    with pytest.raises(ConfigurationError):
        simulate(pf.gamma(3.0), -1.0, SimConfig((0.1,), 10, 0, dt=0.01))


def test_noise_free_path_is_euler_of_the_ode():
    cfg = SimConfig((0.5, 1.0), 4, 0, dt=0.01, noise=False)
    ens = simulate(pf.normal(), 2.0, cfg)
    expected = 2.0 * (1 - 0.005) ** np.array([50, 100])
    np.testing.assert_allclose(ens.values, np.tile(expected, (4, 1)), rtol=1e-12)


def test_ou_mean_and_variance():
    cfg = SimConfig((0.5, 2.0), 100_000, 3, dt=0.01)
    ens = simulate(pf.normal(), 3.0, cfg)
    for t in cfg.t_grid:
        z = ens.at(t)
        se = z.std() / math.sqrt(z.size)
        assert abs(z.mean() - 3.0 * (1 - 0.005) ** round(t / 0.01)) <= 4 * se
        var = _euler_ou_var(0.01, t)
        assert abs(z.var(ddof=1) - var) <= 4 * var * math.sqrt(2 / z.size)


def test_weak_order_one_for_ou_variance():
    # halving dt should halve the variance bias at a fixed time
    t, n = 2.0, 200_000
    exact = 1 - math.exp(-t)
    biases = []
    for dt in (0.25, 0.125):
        ens = simulate(pf.normal(), 0.0, SimConfig((t,), n, 11, dt=dt))
        biases.append(ens.at(t).var(ddof=1) - exact)
    ratio = biases[0] / biases[1]
    oracle = (_euler_ou_var(0.25, t) - exact) / (_euler_ou_var(0.125, t) - exact)
    assert 1.7 <= ratio <= 2.5
    assert abs(ratio - oracle) <= 0.3


def test_bit_identical_across_workers():
    base = dict(t_grid=(0.1, 0.2), n_paths=5000, seed=7, dt=0.01, block_size=1000)
    a = simulate(pf.gamma(3.0), 1.0, SimConfig(**base, workers=1))
    b = simulate(pf.gamma(3.0), 1.0, SimConfig(**base, workers=4))
    assert np.array_equal(a.values, b.values)
    c = simulate(pf.gamma(3.0), 1.0, SimConfig(**base, workers=1))
    assert np.array_equal(a.values, c.values)
    d = simulate(pf.gamma(3.0), 1.0, SimConfig(**{**base, "seed": 8}))
    assert not np.array_equal(a.values, d.values)


@pytest.mark.parametrize("policy", ["clamp_with_indicator", "reflect"])
def test_bounded_paths_stay_in_support(policy):
    spec = pf.beta(2.0, 3.0)
    cfg = SimConfig((0.5, 1.0), 2000, 1, dt=0.01, boundary_policy=policy)
    ens = simulate(spec, 0.02, cfg)
    assert ens.values.min() >= 0.0 and ens.values.max() <= 1.0
    g = simulate(pf.gamma(1.5), 0.01, SimConfig((1.0,), 2000, 1, dt=0.01, boundary_policy=policy))
    assert g.values.min() >= 0.0


def test_gamma_ensemble_relaxes_to_stationary_mean():
    spec = pf.gamma(7.0)
    ens = simulate(spec, 1.0, SimConfig((12.0,), 20_000, 2, dt=0.01))
    z = ens.at(12.0)
    se = z.std() / math.sqrt(z.size)
    assert abs(z.mean() - 7.0) <= 4 * se + 0.02


def test_ensemble_io(tmp_path):
    ens = simulate(pf.normal(), 0.0, SimConfig((0.1, 0.2), 3, 0, dt=0.1))
    ens.to_csv(tmp_path / "e.csv")
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "t,path_id,value" and len(lines) == 1 + 6
    ens.summary_json(tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["n_paths"] == 3 and s["t"] == [0.1, 0.2]
    with pytest.raises(KeyError):
        ens.at(0.15)


@pytest.mark.parametrize("spec", [pf.normal(), pf.gamma(7.0), pf.beta(5.0, 10.0), pf.student(5.0)],
                         ids=lambda s: s.name)
def test_stationary_sample_moments(spec):
    z = stationary_sample(spec, 200_000, 4)
    se = z.std() / math.sqrt(z.size)
    assert abs(z.mean() - spec.m) <= 4 * se
    assert np.array_equal(z, stationary_sample(spec, 200_000, 4))


def test_stationary_sample_needs_builtin():
    with pytest.raises(UnsupportedError):
        stationary_sample(pf.PearsonSpec(0.0, 0.0, 2.0, 0.0), 10, 0)
