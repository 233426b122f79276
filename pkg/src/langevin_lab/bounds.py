"""Executable versions of the sampler's inequalities, plus decay-rate fits.

Each ``check_*`` function returns a :class:`BoundReport` whose ``holds`` flag
is ``lhs <= rhs + tolerance``; the tolerance is recorded in ``context``.
Monte-Carlo left-hand sides are inflated by three standard errors first, so
noise can only make a check fail, never pass.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .metrics import EmpiricalMeasure, kl_gaussian, pinsker_tv_bound, tv_gaussian_1d, ula_gaussian_law, w2_gaussian
from .targets import GaussianOracle, tail_probability_bound

__all__ = [
    "BoundReport",
    "descent_rhs",
    "check_descent_lemma_gaussian",
    "w2_truncation_rhs",
    "w2_subexp_rhs",
    "w2_tv_exact_rhs",
    "check_w2_tv_gaussian_pair",
    "check_w2_subexp_gaussian_pair",
    "check_pinsker_gaussian_pair",
    "check_tail_mc",
    "check_my_tail",
    "check_my_bias_scaling",
    "fit_decay_rate",
    "random_gaussian_pairs",
    "format_table",
    "MC_SIGMAS",
]

log = logging.getLogger(__name__)

MC_SIGMAS = 3.0


@dataclass
class BoundReport:
    name: str
    lhs: float
    rhs: float
    holds: bool
    slack: float
    context: dict = field(default_factory=dict)

    @classmethod
    def compare(cls, name: str, lhs: float, rhs: float, tolerance: float = 0.0, **context) -> "BoundReport":
        context["tolerance"] = tolerance
        holds = bool(lhs <= rhs + tolerance)
        return cls(name, float(lhs), float(rhs), holds, float(rhs - lhs), context)

    def to_json(self) -> str:
        row = {"name": self.name, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds,
               "slack": self.slack, "context": self.context}
        return json.dumps(row, sort_keys=True, default=float)


def format_table(reports: Sequence[BoundReport]) -> str:
    """Fixed-width pass/fail table."""
    lines = [f"{'check':<40} {'lhs':>14} {'rhs':>14} {'result':>6}"]
    for r in reports:
        lines.append(f"{r.name:<40} {r.lhs:>14.6g} {r.rhs:>14.6g} {'PASS' if r.holds else 'FAIL':>6}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# descent lemma


def descent_rhs(w2_sq_init: float, gamma: float, n: int, L: float, d: int) -> float:
    """``W2^2 / (2 γ n) + L d γ``."""
    if not gamma > 0 or n < 1:
        raise ValueError("need gamma > 0 and n >= 1")
    return w2_sq_init / (2.0 * gamma * n) + L * d * gamma


def check_descent_lemma_gaussian(gamma: float, n: int) -> BoundReport:
    """Averaged KL of ULA on N(0, 1) from δ0 against the descent-lemma bound.

    The average of ``KL(law_k | target)`` over ``k = 1..n`` dominates the KL of
    the averaged law by convexity, so comparing it is the stricter test.
    """
    if not 0 < gamma < 1 or n < 1:
        raise ValueError("need 0 < gamma < 1 and n >= 1")
    target = GaussianOracle.standard(1)
    total, var = 0.0, 0.0
    for _ in range(n):
        _, var = ula_gaussian_law(0.0, var, gamma, 1)
        total += kl_gaussian(GaussianOracle([0.0], [var]), target)
    lhs = total / n
    rhs = descent_rhs(1.0, gamma, n, 1.0, 1)
    return BoundReport.compare("descent-lemma", lhs, rhs, 0.0, gamma=gamma, n=n)


# ---------------------------------------------------------------------------
# W2 from TV


def w2_truncation_rhs(R: float, tv: float, tail_x: tuple[float, float], tail_y: tuple[float, float]) -> float:
    """Truncation bound on ``W2^2``.

    ``tail_x`` and ``tail_y`` are ``(E[|X|^2 1{|X|>R}], P(|X|>R))`` for each side.
    """
    if not R > 0 or not 0 <= tv <= 1:
        raise ValueError("need R > 0 and tv in [0, 1]")
    (ex, px), (ey, py) = tail_x, tail_y
    return 4 * R * R * tv + 2 * (ex + R * R * px) + 2 * (ey + R * R * py)


def w2_subexp_rhs(R: float, C: float, tv: float) -> float:
    """``4R^2 TV + 8(R^2 + RC + C^2) e^{1 - R/C}`` for ``R >= C``."""
    if not C > 0:
        raise ValueError("C must be positive")
    if R < C:
        raise ValueError(f"need R >= C, got R={R}, C={C}")
    if not 0 <= tv <= 1:
        raise ValueError("tv must lie in [0, 1]")
    return 4 * R * R * tv + 8 * (R * R + R * C + C * C) * math.exp(1.0 - R / C)


def w2_tv_exact_rhs(C: float, tv: float) -> float:
    """``20 C^2 max(ln^2(1/TV), 1) TV``, with value 0 at ``TV = 0``."""
    if not C > 0:
        raise ValueError("C must be positive")
    if not 0 <= tv <= 1:
        raise ValueError("tv must lie in [0, 1]")
    if tv == 0:
        return 0.0
    return 20.0 * C * C * max(math.log(tv) ** 2, 1.0) * tv


def _moment_scale(a: GaussianOracle, b: GaussianOracle) -> float:
    return math.sqrt(max(a.second_moment, b.second_moment))


def check_w2_tv_gaussian_pair(a: GaussianOracle, b: GaussianOracle) -> BoundReport:
    tv = tv_gaussian_1d(a, b)
    C = _moment_scale(a, b)
    lhs = w2_gaussian(a, b) ** 2
    return BoundReport.compare("w2-tv-exact", lhs, w2_tv_exact_rhs(C, tv), 0.0, C=C, tv=tv)


def check_w2_subexp_gaussian_pair(a: GaussianOracle, b: GaussianOracle, R_mults: Iterable[float] = (1, 2, 4)) -> list[BoundReport]:
    tv = tv_gaussian_1d(a, b)
    C = _moment_scale(a, b)
    lhs = w2_gaussian(a, b) ** 2
    return [
        BoundReport.compare("w2-subexp", lhs, w2_subexp_rhs(m * C, C, tv), 0.0, R=m * C, C=C, tv=tv)
        for m in R_mults
    ]


def check_pinsker_gaussian_pair(a: GaussianOracle, b: GaussianOracle) -> BoundReport:
    kl = kl_gaussian(a, b)
    return BoundReport.compare("pinsker", tv_gaussian_1d(a, b), pinsker_tv_bound(kl), 0.0, kl=kl)


def random_gaussian_pairs(n: int = 100, seed: int = 0, mean_range: float = 2.0,
                          sigma_range: tuple[float, float] = (0.5, 2.0)) -> list[tuple[GaussianOracle, GaussianOracle]]:
    """Seeded 1-D Gaussian pairs with means in ``[-mean_range, mean_range]``."""
    gen = np.random.default_rng(seed)
    m = gen.uniform(-mean_range, mean_range, size=(n, 2))
    s = gen.uniform(*sigma_range, size=(n, 2))
    return [(GaussianOracle([m[i, 0]], [s[i, 0] ** 2]), GaussianOracle([m[i, 1]], [s[i, 1] ** 2])) for i in range(n)]


# ---------------------------------------------------------------------------
# Monte-Carlo tail checks


def check_tail_mc(samples: EmpiricalMeasure, C: float, R_grid: Iterable[float]) -> list[BoundReport]:
    """Empirical ``P(|X| > R C)`` plus three standard errors against ``e^{1-R}``.

    Radii ``R <= 1`` carry no content and are skipped with a warning.
    """
    norms = samples.norms()
    w = samples.weights
    n_eff = samples.effective_size
    reports = []
    for R in R_grid:
        if R <= 1:
            log.warning("tail check skipped at R=%g: the bound needs R > 1", R)
            continue
        p = float(w @ (norms > R * C))
        se = math.sqrt(p * (1 - p) / n_eff)
        reports.append(BoundReport.compare(
            "tail-mc", p + MC_SIGMAS * se, tail_probability_bound(R), 0.0, R=R, C=C, p_hat=p, se=se,
        ))
    return reports


def check_my_tail(samples: EmpiricalMeasure, D: float, R_grid: Sequence[float], min_tail: int = 100) -> BoundReport:
    """Exponential tail decay at rate about ``1/D`` for the penalised law.

    ``lhs`` is the least-squares slope of ``ln P(|X| > R)`` in ``R``; the check
    holds when it is at most ``-0.8 / D``. No mass beyond the grid holds
    trivially; fewer than ``min_tail`` points beyond the smallest radius is
    reported as inconclusive (``holds`` false, ``lhs`` NaN).
    """
    grid = np.sort(np.asarray(R_grid, dtype=float))
    rhs = -0.8 / D
    norms = samples.norms()
    beyond = int(np.sum(norms > grid[0]))
    if beyond == 0:
        return BoundReport.compare("my-tail", -math.inf, rhs, 0.0, D=D, note="no mass beyond the grid", n_tail=0)
    if beyond < min_tail:
        return BoundReport("my-tail", math.nan, rhs, False, math.nan,
                           {"D": D, "note": "inconclusive: too few tail samples", "n_tail": beyond, "tolerance": 0.0})
    surv = np.array([float(samples.weights @ (norms > R)) for R in grid])
    keep = surv > 0
    if keep.sum() < 2:
        return BoundReport.compare("my-tail", -math.inf, rhs, 0.0, D=D, note="survival vanishes inside the grid",
                                   n_tail=beyond)
    slope = _ls_slope(grid[keep], np.log(surv[keep]))
    return BoundReport.compare("my-tail", slope, rhs, 0.0, D=D, n_tail=beyond)


# ---------------------------------------------------------------------------
# rates


def _ls_slope(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xc = x - x.mean()
    return float(np.dot(xc, y - y.mean()) / np.dot(xc, xc))


def fit_decay_rate(series: Sequence[tuple[float, float]]) -> float:
    """Least-squares slope of ``ln(value)`` against ``k``."""
    if len(series) < 3:
        raise ValueError("need at least 3 points")
    k = np.array([s[0] for s in series], dtype=float)
    v = np.array([s[1] for s in series], dtype=float)
    if np.any(v <= 0):
        raise ValueError("values must be positive")
    return _ls_slope(k, np.log(v))


def check_my_bias_scaling(w2_series: Sequence[tuple], slope_band: tuple[float, float] = (0.1, 0.6),
                          validity_limit: Optional[float] = None) -> BoundReport:
    """Penalty bias shrinking like a small power of ``λ``.

    ``w2_series`` holds ``(λ, w2)`` or ``(λ, w2, standard_error)`` with ``λ``
    decreasing. Two conditions must hold: each step down in ``λ`` may raise W2
    by at most two combined standard errors, and the log-log slope of W2
    against ``λ`` lies in ``slope_band``. ``lhs`` is the worst violation of
    either condition and ``rhs`` is 0. Points with ``λ >= validity_limit`` are
    accepted but listed in the context.
    """
    if len(w2_series) < 3:
        raise ValueError("need at least 3 points")
    lam = np.array([s[0] for s in w2_series], dtype=float)
    w2 = np.array([s[1] for s in w2_series], dtype=float)
    se = np.array([s[2] if len(s) > 2 else 0.0 for s in w2_series], dtype=float)
    if np.any(np.diff(lam) >= 0):
        raise ValueError("lambda values must be strictly decreasing")
    if np.any(lam <= 0) or np.any(w2 <= 0):
        raise ValueError("lambda and w2 values must be positive")
    comb = 2.0 * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
    mono = float(np.max(np.diff(w2) - comb))
    slope = _ls_slope(np.log(lam), np.log(w2))
    lo, hi = slope_band
    band = max(lo - slope, slope - hi)
    ctx = {"slope": slope, "monotone_excess": mono, "slope_band": list(slope_band)}
    if validity_limit is not None:
        ctx["outside_validity"] = [float(v) for v in lam if v >= validity_limit]
        ctx["validity_limit"] = validity_limit
    return BoundReport.compare("my-bias-scaling", max(mono, band), 0.0, 0.0, **ctx)
