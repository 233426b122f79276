import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from langevin_lab.bounds import (
    BoundReport,
    check_descent_lemma_gaussian,
    check_my_bias_scaling,
    check_my_tail,
    check_pinsker_gaussian_pair,
    check_tail_mc,
    check_w2_subexp_gaussian_pair,
    check_w2_tv_gaussian_pair,
    descent_rhs,
    fit_decay_rate,
    format_table,
    random_gaussian_pairs,
    w2_subexp_rhs,
    w2_truncation_rhs,
    w2_tv_exact_rhs,
)
from langevin_lab.experiment import exact_reference_sampler
from langevin_lab.metrics import EmpiricalMeasure
from langevin_lab.targets import GaussianOracle

G = GaussianOracle


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 1))
def test_report_holds_iff_within_tolerance(lhs, rhs, tol):
    r = BoundReport.compare("x", lhs, rhs, tol)
    assert r.holds == (lhs <= rhs + tol)
    assert r.context["tolerance"] == tol
    assert r.slack == pytest.approx(rhs - lhs)


def test_report_json_and_table():
    r = BoundReport.compare("demo", 1.0, 2.0, 0.0, note="x")
    row = json.loads(r.to_json())
    assert row == {"name": "demo", "lhs": 1.0, "rhs": 2.0, "holds": True, "slack": 1.0,
                   "context": {"note": "x", "tolerance": 0.0}}
    text = format_table([r, BoundReport.compare("bad", 3.0, 2.0)])
    assert "PASS" in text and "FAIL" in text


def test_descent_rhs_examples():
    assert descent_rhs(4.0, 0.01, 100, 1.0, 2) == pytest.approx(2.02)
    assert descent_rhs(0.0, 0.1, 37, 1.0, 1) == pytest.approx(0.1)
    L, d, n = 2.0, 3, 50
    gamma = 1 / (L * d)
    w2 = 2 * gamma * n * (L * d * gamma)
    assert descent_rhs(w2, gamma, n, L, d) == pytest.approx(2 * L * d * gamma)
    with pytest.raises(ValueError):
        descent_rhs(1.0, 0.0, 1, 1.0, 1)


def test_descent_check_examples():
    assert check_descent_lemma_gaussian(0.1, 100).holds
    assert check_descent_lemma_gaussian(0.01, 10).holds
    r = check_descent_lemma_gaussian(0.5, 1)
    assert r.lhs == pytest.approx(0.0, abs=1e-15)
    assert r.rhs == pytest.approx(1.5)
    assert r.holds


def test_descent_check_lhs_is_average_of_kl():
    # independent evaluation of the per-step laws
    gamma, n = 0.2, 5
    var, acc = 0.0, 0.0
    for _ in range(n):
        var = (1 - gamma) ** 2 * var + 2 * gamma
        acc += 0.5 * (var - 1 - math.log(var))
    assert check_descent_lemma_gaussian(gamma, n).lhs == pytest.approx(acc / n, rel=1e-12)


def test_truncation_rhs_examples():
    assert w2_truncation_rhs(2.0, 0.3, (0, 0), (0, 0)) == pytest.approx(4 * 4 * 0.3)
    assert w2_truncation_rhs(2.0, 0.0, (0, 0), (0, 0)) == 0.0
    assert w2_truncation_rhs(1.0, 0.25, (0.1, 0.05), (0.1, 0.05)) == pytest.approx(1.6)


def test_subexp_rhs_examples():
    assert w2_subexp_rhs(1, 1, 0) == pytest.approx(24)
    assert w2_subexp_rhs(2, 1, 0.25) == pytest.approx(4 + 56 * math.exp(-1))
    assert w2_subexp_rhs(2, 1, 0.25) == pytest.approx(24.6012, abs=1e-4)
    assert w2_subexp_rhs(1, 1, 1) == pytest.approx(28)
    with pytest.raises(ValueError):
        w2_subexp_rhs(0.5, 1, 0.1)


@given(st.floats(1, 5), st.floats(0.1, 3), st.floats(0, 1), st.floats(0, 1))
def test_subexp_rhs_monotone_in_tv(mult, C, t1, t2):
    R = mult * C
    lo, hi = sorted((t1, t2))
    assert w2_subexp_rhs(R, C, lo) <= w2_subexp_rhs(R, C, hi)
    assert w2_subexp_rhs(R, C, hi) - w2_subexp_rhs(R, C, lo) == pytest.approx(4 * R * R * (hi - lo), abs=1e-9)


def test_exact_rhs_examples():
    assert w2_tv_exact_rhs(1, math.exp(-2)) == pytest.approx(80 * math.exp(-2))
    assert w2_tv_exact_rhs(1, math.exp(-2)) == pytest.approx(10.8268, abs=1e-4)
    assert w2_tv_exact_rhs(1, 1) == pytest.approx(20)
    assert w2_tv_exact_rhs(1, 0) == 0.0
    assert w2_tv_exact_rhs(1, 1e-300) < 1e-290


def test_exact_rhs_continuous_at_switch():
    t = math.exp(-1)
    eps = 1e-13
    left, right = w2_tv_exact_rhs(1.3, t * (1 - eps)), w2_tv_exact_rhs(1.3, t * (1 + eps))
    assert abs(left - right) < 1e-11
    assert w2_tv_exact_rhs(1.3, t) == pytest.approx(20 * 1.69 * t, rel=1e-12)


def test_w2_tv_pair_examples():
    a = G([0.0], [1.0])
    r = check_w2_tv_gaussian_pair(a, G([0.5], [1.0]))
    tv = 2 * norm.cdf(0.25) - 1
    assert r.context["tv"] == pytest.approx(tv)
    assert r.context["tv"] == pytest.approx(0.197413, abs=1e-6)
    assert r.lhs == pytest.approx(0.25)
    assert r.rhs == pytest.approx(20 * 1.25 * math.log(tv) ** 2 * tv)
    # ln^2(1/0.197413) = 2.63247
    assert r.rhs == pytest.approx(12.9916, abs=1e-4)
    assert r.holds
    same = check_w2_tv_gaussian_pair(a, a)
    assert (same.lhs, same.rhs, same.holds) == (0.0, 0.0, True)
    assert check_w2_tv_gaussian_pair(a, G([3.0], [1.0])).holds


def test_random_pairs_ranges_and_seeding():
    pairs = random_gaussian_pairs(100, seed=3)
    assert len(pairs) == 100
    for a, b in pairs:
        for g in (a, b):
            assert -2 <= g.mean[0] <= 2
            assert 0.5 <= math.sqrt(g.variances[0]) <= 2
    again = random_gaussian_pairs(100, seed=3)
    assert all(np.array_equal(p[0].mean, q[0].mean) for p, q in zip(pairs, again))


def test_pair_checks_hold_on_random_pairs():
    for a, b in random_gaussian_pairs(100, seed=0):
        assert check_w2_tv_gaussian_pair(a, b).holds
        assert all(r.holds for r in check_w2_subexp_gaussian_pair(a, b))
        assert check_pinsker_gaussian_pair(a, b).holds


@pytest.fixture(scope="module")
def gauss_cloud():
    return exact_reference_sampler("gaussian", 10**6, 0, dim=1)


def test_tail_mc_examples(gauss_cloud, caplog):
    reps = check_tail_mc(gauss_cloud, 1.0, [2.0, 3.0])
    assert [r.holds for r in reps] == [True, True]
    assert reps[0].context["p_hat"] == pytest.approx(2 * norm.sf(2), abs=1e-3)
    assert reps[1].context["p_hat"] == pytest.approx(2 * norm.sf(3), abs=3e-4)
    assert reps[0].rhs == pytest.approx(math.exp(-1))
    assert check_tail_mc(gauss_cloud, 1.0, [1.0, 0.5]) == []
    assert "skipped" in caplog.text


def test_tail_mc_detects_heavy_tail():
    x = np.random.default_rng(0).standard_cauchy(100_000) * 5
    reps = check_tail_mc(EmpiricalMeasure(x), 1.0, [2.0])
    assert not reps[0].holds


def test_my_tail_examples():
    g = np.random.default_rng(1)
    D = 2.0
    inside = g.uniform(-1, 1, size=(5000, 2))
    assert check_my_tail(EmpiricalMeasure(inside), D, [2.0, 3.0, 4.0]).holds
    r = g.exponential(D, 200_000)
    rep = check_my_tail(EmpiricalMeasure(r), D, [2.0, 4.0, 6.0, 8.0])
    assert rep.holds
    assert rep.lhs == pytest.approx(-1 / D, rel=0.05)
    pareto = (g.pareto(1.5, 200_000) + 1) * 2.0
    assert not check_my_tail(EmpiricalMeasure(pareto), D, [2.0, 4.0, 6.0, 8.0]).holds


def test_my_tail_inconclusive():
    x = np.concatenate([np.zeros(1000), np.full(50, 5.0)])
    rep = check_my_tail(EmpiricalMeasure(x), 1.0, [1.0, 2.0])
    assert not rep.holds and math.isnan(rep.lhs)


@pytest.mark.parametrize(
    "values,slope",
    [([math.exp(-k) for k in range(1, 6)], -1.0), ([0.3] * 5, 0.0), ([math.exp(-2 * k) for k in range(1, 6)], -2.0)],
)
def test_fit_decay_rate_examples(values, slope):
    assert fit_decay_rate(list(enumerate(values, start=1))) == pytest.approx(slope, abs=1e-12)


def test_fit_decay_rate_validation():
    with pytest.raises(ValueError):
        fit_decay_rate([(1, 1.0), (2, 0.5)])
    with pytest.raises(ValueError):
        fit_decay_rate([(1, 1.0), (2, 0.0), (3, 0.5)])


LAMS = [0.1, 0.03, 0.01, 0.003]


def test_bias_scaling_examples():
    exact = check_my_bias_scaling([(lam, lam**0.25) for lam in LAMS])
    assert exact.holds
    assert exact.context["slope"] == pytest.approx(0.25)
    assert not check_my_bias_scaling([(lam, 0.2) for lam in LAMS]).holds
    bumpy = [(0.1, 0.5, 0.02), (0.03, 0.52, 0.02), (0.01, 0.3, 0.02), (0.003, 0.22, 0.02)]
    assert check_my_bias_scaling(bumpy).holds
    too_big = [(0.1, 0.5, 0.001), (0.03, 0.6, 0.001), (0.01, 0.3, 0.001), (0.003, 0.22, 0.001)]
    assert not check_my_bias_scaling(too_big).holds


def test_bias_scaling_lists_points_outside_validity():
    rep = check_my_bias_scaling([(lam, lam**0.3) for lam in LAMS], validity_limit=1 / 32)
    assert rep.holds
    assert rep.context["outside_validity"] == [0.1]
    with pytest.raises(ValueError):
        check_my_bias_scaling([(0.01, 1.0), (0.03, 1.0), (0.1, 1.0)])
