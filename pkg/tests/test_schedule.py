import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from langevin_lab.schedule import (
    DoubleLoopSchedule,
    ScheduleScale,
    StepSequence,
    dl_myula_schedule,
    dl_ula_schedule,
    polynomial_schedule,
    total_iterations,
)
from langevin_lab.targets import TailParams

E = math.e


def ref_ula(L, d, eta, m_eta, k):
    """Independent evaluation of the unconstrained schedule at stage k."""
    m_sq = 2 * d * (d + 1) / eta**2 + m_eta**2
    return math.exp(-2 * k) / (L * d), math.ceil(L * m_sq * d * k * k * math.exp(3 * k)), math.sqrt(m_sq) * k


def test_dl_ula_examples():
    s = dl_ula_schedule(1.0, 2, TailParams(1.0, 0.0))
    gamma, n, tau, lam = s.stage(1)
    assert n == 483
    assert gamma == pytest.approx(0.0676676, abs=1e-7)
    assert tau == pytest.approx(3.46410, abs=1e-5)
    assert lam is None
    assert s.gamma(2) == pytest.approx(0.00915782, abs=1e-8)
    scaled = dl_ula_schedule(1.0, 2, TailParams(1.0, 0.0), ScheduleScale(0.001, 1.0, 100))
    assert scaled.inner_count(1) == 1


@pytest.mark.parametrize("k", range(1, 7))
@pytest.mark.parametrize("L,d,eta,m_eta", [(1, 2, 1, 0), (3, 1, 0.5, 2), (0.5, 4, 2, 1)])
def test_dl_ula_matches_reference(L, d, eta, m_eta, k):
    s = dl_ula_schedule(L, d, TailParams(eta, m_eta))
    g, n, t = ref_ula(L, d, eta, m_eta, k)
    assert s.gamma(k) == pytest.approx(g, rel=1e-14)
    assert s.inner_count(k) == n
    assert s.clip_radius(k) == pytest.approx(t, rel=1e-14)


def test_dl_myula_examples():
    # 1/(8 + e^2) = 0.0649812
    s1 = dl_myula_schedule(1.0, 1, 1.0, 1.0)
    assert s1.penalty(1) == pytest.approx(1 / (8 + E**2), rel=1e-14)
    assert s1.penalty(1) == pytest.approx(0.0649812, abs=1e-7)
    s2 = dl_myula_schedule(1.0, 2, 1.0, 1.0)
    # 1/(32 + 2e^2) = 0.0213775
    assert s2.penalty(1) == pytest.approx(1 / (32 + 2 * E**2), rel=1e-14)
    assert s2.penalty(1) == pytest.approx(0.0213775, abs=1e-7)
    assert s1.gamma(1) == pytest.approx(0.0183156, abs=1e-7)
    assert s1.inner_count(1) == 149
    assert s1.clip_radius(3) == 3.0


def test_dl_myula_zero_smoothness_uses_unit_reference():
    s = dl_myula_schedule(0.0, 2, 1.0, 1.0)
    assert s.gamma(1) == pytest.approx(math.exp(-4) / 2)
    assert s.inner_count(1) == math.ceil(2 * math.exp(5))
    assert s.effective_lipschitz(1) == pytest.approx(1 / s.penalty(1))


@pytest.mark.parametrize("k", range(1, 8))
def test_geometric_ratios(k):
    s = dl_ula_schedule(2.0, 3, TailParams(1.0, 1.0))
    assert s.gamma(k + 1) / s.gamma(k) == pytest.approx(E**-2, rel=1e-12)
    nk, nk1 = s.inner_count(k), s.inner_count(k + 1)
    assert E**3 * (1 - 1e-12) <= nk1 / nk <= E**3 * (1 + 1 / k) ** 2 * (1 + 1 / nk)
    m = dl_myula_schedule(1.0, 2, 0.5, 2.0)
    assert m.gamma(k + 1) / m.gamma(k) == pytest.approx(E**-4, rel=1e-12)


@given(st.integers(1, 4), st.floats(0.1, 2.0), st.floats(0.0, 3.0), st.integers(1, 30))
def test_penalty_inside_validity_range(d, r, extra, k):
    s = dl_myula_schedule(1.0, d, r, r + extra)
    assert s.penalty(k) < r * r / (8 * d * d)


@given(st.floats(1e-6, 1.0), st.floats(0.1, 10.0), st.one_of(st.none(), st.integers(1, 10**6)), st.integers(1, 12))
def test_scaled_counts_at_least_one(n_mult, gamma_mult, cap, k):
    s = dl_ula_schedule(1.0, 2, TailParams(1.0, 0.0), ScheduleScale(n_mult, gamma_mult, cap))
    n = s.inner_count(k)
    assert n >= 1
    if cap is not None:
        assert n <= cap
    assert s.gamma(k) == pytest.approx(gamma_mult * math.exp(-2 * k) / 2)


def test_scale_validation():
    for bad in ((0.0, 1.0, None), (1.5, 1.0, None), (1.0, 0.0, None), (1.0, 1.0, 0)):
        with pytest.raises(ValueError):
            ScheduleScale(*bad)


def test_step_warning_flag(caplog):
    with caplog.at_level(logging.WARNING):
        s = dl_ula_schedule(1.0, 1, TailParams(1.0, 0.0), ScheduleScale(gamma_mult=10.0))
    assert s.step_warning
    assert "exceeds" in caplog.text
    assert not dl_ula_schedule(1.0, 1, TailParams(1.0, 0.0)).step_warning


def test_polynomial_examples():
    assert polynomial_schedule(0.1, 0.5)(4) == pytest.approx(0.05)
    assert polynomial_schedule(0.2, 0.5)(1) == pytest.approx(0.2)
    const = polynomial_schedule(0.3, 0.0)
    assert all(const(k) == 0.3 for k in (1, 10, 1000))
    with pytest.raises(ValueError):
        StepSequence(0.1, 1.5)
    with pytest.raises(ValueError):
        const(0)


def test_total_iterations_examples():
    s = dl_ula_schedule(1.0, 2, TailParams(1.0, 0.0))
    assert total_iterations(s, 0) == 0
    flat = DoubleLoopSchedule.from_sequences([0.1] * 3, [10] * 3, [1.0] * 3)
    assert total_iterations(flat, 3) == 30
    # n_2 = ceil(96 e^6) = ceil(38729.16) = 38730
    assert s.inner_count(2) == math.ceil(96 * math.exp(6)) == 38730
    assert total_iterations(s, 2) == 483 + 38730 == 39213


def test_total_iterations_overflow():
    s = DoubleLoopSchedule(lambda k: 1.0, lambda k: 2**62, lambda k: 1.0)
    assert total_iterations(s, 1) == 2**62
    with pytest.raises(OverflowError):
        total_iterations(s, 2)


def test_from_sequences_and_transform():
    s = DoubleLoopSchedule.from_sequences([0.1, 0.01], [5, 50], [2.0, 4.0], [0.5, 0.25])
    assert s.stage(2) == (0.01, 50, 4.0, 0.25)
    t = s.with_transform(gamma_factor=9.0, radius_factor=3.0)
    assert t.stage(1) == pytest.approx((0.9, 5, 6.0, 0.5))
    with pytest.raises(ValueError):
        DoubleLoopSchedule.from_sequences([0.1], [0], [1.0])


def _loglog_slope(ks):
    s = dl_ula_schedule(1.0, 2, TailParams(1.0, 0.0))
    # exact integer totals; late stages exceed int64 so total_iterations is not used
    x = [math.log(sum(s.inner_count(j) for j in range(1, k + 1))) for k in ks]
    y = [math.log(s.gamma(k)) for k in ks]
    return float(np.polyfit(x, y, 1)[0])


@pytest.mark.xfail(strict=True, reason="k^2 factor in n_k flattens the slope to -0.561 over k=1..8; see decisions ledger")
def test_step_vs_total_slope_first_eight_stages():
    assert -0.75 <= _loglog_slope(range(1, 9)) <= -0.60


def test_step_vs_total_slope_asymptotic():
    # log N_k = 3k + 2 log k + O(1), so the local slope is -2 / (3 + 2/k) -> -2/3
    pre = _loglog_slope(range(1, 9))
    assert pre == pytest.approx(-0.5613, abs=1e-3)
    late = _loglog_slope(range(30, 39))
    assert -0.75 <= late <= -0.60
    assert late == pytest.approx(-2 / (3 + 2 / 34), abs=2e-3)
