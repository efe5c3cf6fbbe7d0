import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from pearson_stein import gamma_chaos as gc
from pearson_stein import pearson_family as pf
from pearson_stein.errors import ConfigurationError, DomainError


def exact_negative_moment(spec, q):
    # E[G^-q] = Gamma(q)^-1 int t^(q-1) E[exp(-t G)] dt, G = Gamma(X) = sum lambda^2 Y
    lam2, g = spec.lam**2, spec.gamma_shape
    f = lambda t: t ** (q - 1) * math.exp(-g * np.log1p(t * lam2).sum())
    return integrate.quad(f, 0, np.inf, limit=400, epsrel=1e-11)[0] / math.gamma(q)


def brute_e(values, q):
    return sum(math.prod(c) for c in itertools.combinations(values, q)) if q else 1.0


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        gc.WeightedGammaSpec(1.0, (0.5, 1.0), 2.0)
    with pytest.raises(ConfigurationError):
        gc.WeightedGammaSpec(1.0, (1.0, 0.0), 2.0)
    with pytest.raises(ConfigurationError):
        gc.WeightedGammaSpec(-1.0, (1.0,), 2.0)
    with pytest.raises(ConfigurationError):
        gc.WeightedGammaSpec(1.0, (), 2.0)
    with pytest.raises(ConfigurationError):
        gc.WeightedGammaSpec.from_dict({"gamma": 1.0, "weights": [1.0]})


@settings(max_examples=30, deadline=None)
@given(g=st.floats(0.1, 10), a=st.floats(0.1, 20),
       w=st.lists(st.floats(1e-3, 5.0), min_size=1, max_size=8))
def test_json_round_trip(g, a, w):
    spec = gc.WeightedGammaSpec(g, tuple(sorted(w, reverse=True)), a)
    assert gc.WeightedGammaSpec.from_json(spec.to_json()) == spec


def test_closed_form_example():
    spec = gc.WeightedGammaSpec(2.0, (0.5, 0.5), 1.0)
    assert spec.variance_mismatch() == 0.0
    assert gc.e_q1_sq(spec) == pytest.approx(0.25, abs=1e-15)
    assert gc.e_lq1_sq(spec) == pytest.approx(0.25, abs=1e-15)
    R, S = gc.spectral_sums(spec, 2)
    np.testing.assert_allclose(R, [1, 0.5, 0.125])
    np.testing.assert_allclose(S, [1, 1, 0.5])


def test_mismatch_enters_e_q1_sq():
    spec = gc.WeightedGammaSpec(1.0, (1.0, 1.0), 3.0)
    assert spec.variance_mismatch() == -1.0
    assert gc.e_q1_sq(spec) == 1.0 and gc.e_lq1_sq(spec) == 0.0


def test_unit_weights_give_an_exact_gamma():
    spec = gc.WeightedGammaSpec(2.0, (1.0, 1.0, 1.0), 6.0)
    s = gc.sample(spec, 1000, 0)
    np.testing.assert_allclose(s.Q1, 0.0, atol=1e-12)
    np.testing.assert_allclose(s.gamma_carre, s.F, rtol=1e-14)
    np.testing.assert_allclose(s.LQ1, 0.0)
    np.testing.assert_allclose(gc.exact_moments(spec), gc.gamma_moments(6.0), rtol=1e-14)


def test_sample_moments_match_closed_forms():
    spec = gc.equal_tail_weights(12, 1.0, 4.0)
    s = gc.sample(spec, 400_000, 9)
    lam, g = spec.lam, spec.gamma_shape
    checks = [
        (s.Q1**2, gc.e_q1_sq(spec)),
        (s.LQ1**2, gc.e_lq1_sq(spec)),
        (s.Q1, 0.0),
        (s.Q2, g * float(np.sum(lam * (lam**2 - lam)))),
        (s.X, 0.0),
    ]
    for vals, expected in checks:
        se = vals.std() / math.sqrt(vals.size)
        assert abs(vals.mean() - expected) <= 4 * se + 1e-14
    mu = gc.exact_moments(spec)
    for j in range(4):
        v = s.F ** (j + 1)
        assert abs(v.mean() - mu[j]) <= 4 * v.std() / math.sqrt(v.size)


def test_sample_fields_and_io(tmp_path):
    spec = gc.harmonic_weights(4, 1.0, 3.0)
    s = gc.sample(spec, 100, 1, fields=("F", "Q1"), keep_y=True)
    assert s.X is None and len(s) == 100 and s.Y.shape == (100, 4)
    with pytest.raises(ConfigurationError):
        gc.sample(spec, 10, 1, fields=("Z",))
    s.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "F,Q1"


def test_sampling_is_deterministic_across_workers():
    spec = gc.harmonic_weights(16, 1.0, 8.0)
    a = gc.sample(spec, 10_000, 4, block_size=1000, workers=1)
    b = gc.sample(spec, 10_000, 4, block_size=1000, workers=4)
    for name in gc.FIELDS:
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_nested_samples_share_draws():
    specs = [gc.harmonic_weights(n, 1.0, 8.0) for n in (8, 32)]
    nested = gc.sample_nested(specs, 5000, 2, fields=("F",), block_size=1000)
    for spec, s in zip(specs, nested):
        assert np.array_equal(s.F, gc.sample(spec, 5000, 2, fields=("F",), block_size=1000).F)


@settings(max_examples=40, deadline=None)
@given(v=st.lists(st.floats(-3, 3), min_size=1, max_size=7), q=st.integers(0, 7))
def test_elementary_symmetric_brute_force(v, q):
    e = gc.elementary_symmetric(v, q)
    for r in range(q + 1):
        assert math.isclose(e[r], brute_e(v, r), rel_tol=1e-9, abs_tol=1e-9)


def test_spectral_sums_brute_force():
    spec = gc.geometric_weights(6, 1.5, 5.0, ratio=0.7)
    R, S = gc.spectral_sums(spec, 6)
    for q in range(7):
        assert R[q] == pytest.approx(math.factorial(q) * brute_e(spec.lam**2, q), rel=1e-12)
        assert S[q] == pytest.approx(math.factorial(q) * brute_e(spec.lam, q), rel=1e-12)
    with pytest.raises(ConfigurationError):
        gc.spectral_sums(spec, 7)


def test_m_product():
    spec = gc.WeightedGammaSpec(1.0, (1.0,), 3.0)
    assert gc.m_product(spec, 1) == pytest.approx(0.75)
    assert gc.m_product(spec, 2) == pytest.approx(0.375)
    assert gc.m_product(gc.WeightedGammaSpec(2.0, (0.5, 0.5), 1.0), 2) == 0.0
    with pytest.raises(ConfigurationError):
        gc.m_product(spec, 0)


@pytest.mark.parametrize("n", [16, 256])
@pytest.mark.parametrize("q", [2.0, 4.0, 6.0, 7.5])
def test_laplace_bound_dominates(n, q):
    spec = gc.equal_tail_weights(n, 1.0, 8.0)
    assert gc.negative_moment_bound(spec, q) >= exact_negative_moment(spec, q)


def test_printed_bound_can_fail_to_dominate():
    spec = gc.equal_tail_weights(16, 1.0, 8.0)
    assert gc.negative_moment_bound(spec, 4.0, form="printed") >= exact_negative_moment(spec, 4.0)
    assert gc.negative_moment_bound(spec, 6.0, form="printed") < exact_negative_moment(spec, 6.0)


def test_negative_moment_oracle_matches_monte_carlo():
    spec = gc.equal_tail_weights(16, 1.0, 8.0)
    g = gc.sample(spec, 200_000, 3, fields=("gamma_carre",)).gamma_carre ** -2.0
    assert abs(g.mean() - exact_negative_moment(spec, 2.0)) <= 4 * g.std() / math.sqrt(g.size)


def test_negative_moment_bound_domain():
    spec = gc.equal_tail_weights(16, 1.0, 8.0)
    with pytest.raises(DomainError):
        gc.negative_moment_bound(spec, 0.5)
    with pytest.raises(DomainError):
        gc.negative_moment_bound(spec, 8.0)
    assert math.isinf(gc.negative_moment_bound(gc.WeightedGammaSpec(1.0, (2.0, 2.0), 8.0), 4.0))
    with pytest.warns(RuntimeWarning):
        big = gc.WeightedGammaSpec(1.0, tuple([1.0] * 10), 8.0)
        assert math.isinf(gc.negative_moment_bound(big, 2.0, use="S"))


def test_charfun():
    spec = gc.WeightedGammaSpec(1.0, (1.0, 1.0, 1.0), 3.0)
    t = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(gc.charfun(spec, t), (1 - 1j * t) ** -3.0, rtol=1e-13)
    np.testing.assert_allclose(gc.charfun(spec, t, of="F"), (1 - 1j * t) ** -3.0, rtol=1e-13)
    h = gc.harmonic_weights(6, 0.5, 2.0)
    s = gc.sample(h, 200_000, 1, fields=("F",))
    emp = np.exp(1j * 0.7 * s.F).mean()
    assert abs(emp - gc.charfun(h, 0.7, of="F")) <= 4 / math.sqrt(s.F.size)


def test_four_moment_functional_vanishes_on_targets():
    g = pf.gamma(7.0)
    for q in (1.0, 2.0):
        assert abs(gc.four_moment_M(gc.gamma_moments(7.0), q, g)) <= 1e-10 * 7.0**4
        assert abs(gc.four_moment_M((0.0, 1.0, 0.0, 3.0), q, pf.normal())) <= 1e-12
    assert gc.four_moment_M(gc.exact_moments(gc.harmonic_weights(8, 1.0, 7.0)), 2.0, g) != 0.0


def test_four_moment_functional_errors():
    with pytest.raises(ConfigurationError):
        gc.four_moment_M((1, 2, 3), 1.0, pf.normal())
    with pytest.raises(ConfigurationError):
        gc.four_moment_M((0, 1, 0, 3), 1.0, (1.0, 0.0, 1.0, 0.0))
    with pytest.raises(ConfigurationError):
        gc.four_moment_M((0, 1, 0, 3), 1.0, (0.5, 0.0, 1.0, 0.0))


@pytest.mark.parametrize("family", sorted(gc.WEIGHT_FAMILIES))
def test_weight_families_are_normalised(family):
    spec = gc.weight_family(family, 20, 1.0, 8.0)
    assert abs(spec.variance_mismatch()) <= 1e-12
    assert spec.k == 20


def test_weight_family_errors():
    with pytest.raises(ConfigurationError):
        gc.weight_family("uniform", 10, 1.0, 8.0)
    with pytest.raises(ConfigurationError):
        gc.equal_tail_weights(10, 3.0, 8.0)
    with pytest.raises(ConfigurationError):
        gc.equal_tail_weights(8, 1.0, 8.0)


def test_e_q1_sq_decreases_along_families():
    for family in ("harmonic", "equal-tail"):
        vals = [gc.e_q1_sq(gc.weight_family(family, n, 1.0, 8.0)) for n in (16, 32, 64, 128, 256)]
        assert all(a > b for a, b in zip(vals, vals[1:]))
    # the equal-tail family converges; the harmonic one does not
    assert gc.e_q1_sq(gc.equal_tail_weights(4096, 1.0, 8.0)) < 1e-2
    assert gc.e_q1_sq(gc.harmonic_weights(4096, 1.0, 8.0)) > 7.0
