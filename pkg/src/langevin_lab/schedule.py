"""Step-size, inner-loop length, clipping radius and penalty sequences.

Outer iterations are indexed from ``k = 1``. The theorem constants are far
too conservative to run as written, so every double-loop schedule carries a
:class:`ScheduleScale` that multiplies ``n_k`` and ``γ_k`` and optionally caps
``n_k``; the geometric decay bases are never touched.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .targets import TailParams, second_moment_bound

__all__ = [
    "ScheduleScale",
    "DoubleLoopSchedule",
    "StepSequence",
    "dl_ula_schedule",
    "dl_myula_schedule",
    "polynomial_schedule",
    "total_iterations",
]

log = logging.getLogger(__name__)

_INT64_MAX = 2**63 - 1


@dataclass(frozen=True)
class ScheduleScale:
    n_mult: float = 1.0
    gamma_mult: float = 1.0
    n_cap: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.n_mult <= 1:
            raise ValueError("n_mult must lie in (0, 1]")
        if not self.gamma_mult > 0:
            raise ValueError("gamma_mult must be positive")
        if self.n_cap is not None and self.n_cap < 1:
            raise ValueError("n_cap must be a positive integer")

    def count(self, raw: float) -> int:
        n = self.n_mult * raw
        if self.n_cap is not None:
            n = min(n, self.n_cap)
        return max(1, math.ceil(n))


@dataclass(frozen=True)
class DoubleLoopSchedule:
    """Per-outer-iteration sequences ``γ_k, n_k, τ_k`` and optionally ``λ_k``."""

    gamma: Callable[[int], float]
    inner_count: Callable[[int], int]
    clip_radius: Callable[[int], float]
    penalty: Optional[Callable[[int], float]] = None
    scale: ScheduleScale = field(default_factory=ScheduleScale)
    kind: str = "custom"
    lipschitz: Optional[float] = None
    step_warning: bool = False

    def effective_lipschitz(self, k: int) -> Optional[float]:
        if self.lipschitz is None:
            return None
        if self.penalty is None:
            return self.lipschitz
        return self.lipschitz + 1.0 / self.penalty(k)

    def stage(self, k: int) -> tuple[float, int, float, Optional[float]]:
        lam = None if self.penalty is None else self.penalty(k)
        return self.gamma(k), self.inner_count(k), self.clip_radius(k), lam

    @classmethod
    def from_sequences(
        cls,
        gammas: Sequence[float],
        counts: Sequence[int],
        radii: Sequence[float],
        penalties: Optional[Sequence[float]] = None,
    ) -> "DoubleLoopSchedule":
        """Schedule from explicit lists; entry ``i`` is outer iteration ``i + 1``."""
        g, n, t = list(gammas), [int(c) for c in counts], list(radii)
        if any(c < 1 for c in n):
            raise ValueError("inner counts must be positive")
        lam = None if penalties is None else list(penalties)
        return cls(
            gamma=lambda k: g[k - 1],
            inner_count=lambda k: n[k - 1],
            clip_radius=lambda k: t[k - 1],
            penalty=None if lam is None else (lambda k: lam[k - 1]),
        )

    def with_transform(self, gamma_factor: float = 1.0, radius_factor: float = 1.0) -> "DoubleLoopSchedule":
        """Same schedule with every ``γ_k`` and ``τ_k`` multiplied by constants."""
        return DoubleLoopSchedule(
            gamma=lambda k: gamma_factor * self.gamma(k),
            inner_count=self.inner_count,
            clip_radius=lambda k: radius_factor * self.clip_radius(k),
            penalty=self.penalty,
            scale=self.scale,
            kind=self.kind,
            lipschitz=self.lipschitz,
            step_warning=self.step_warning,
        )


def _flag(gamma1: float, l_eff: float, d: int) -> bool:
    if gamma1 * l_eff * d > 1:
        log.warning("first step size %.3g exceeds 1/(L_eff d) = %.3g", gamma1, 1.0 / (l_eff * d))
        return True
    return False


def dl_ula_schedule(L: float, d: int, tail: TailParams, scale: ScheduleScale = ScheduleScale()) -> DoubleLoopSchedule:
    """Unconstrained double-loop schedule.

    ``n_k = L M^2 d k^2 e^{3k}``, ``γ_k = e^{-2k} / (L d)``, ``τ_k = M k`` with
    ``M^2`` the second-moment bound of the light-tail constants.
    """
    if not L > 0 or d < 1:
        raise ValueError("need L > 0 and d >= 1")
    m_sq = second_moment_bound(tail, d)
    m = math.sqrt(m_sq)

    def gamma(k):
        return scale.gamma_mult * math.exp(-2.0 * k) / (L * d)

    def inner_count(k):
        return scale.count(L * m_sq * d * k * k * math.exp(3.0 * k))

    return DoubleLoopSchedule(
        gamma=gamma,
        inner_count=inner_count,
        clip_radius=lambda k: m * k,
        scale=scale,
        kind="dl-ula",
        lipschitz=L,
        step_warning=_flag(gamma(1), L, d),
    )


def dl_myula_schedule(L: float, d: int, r: float, D: float, scale: ScheduleScale = ScheduleScale()) -> DoubleLoopSchedule:
    """Constrained double-loop schedule with a vanishing Moreau-Yosida penalty.

    ``λ_k = 1 / (8d^2/r^2 + d e^{2k})``, ``n_k = L d k^2 e^{5k}``,
    ``γ_k = e^{-4k} / (L d)``, ``τ_k = D k``. For ``f ≡ 0`` (``L = 0``) the
    step and count formulas use ``L = 1``; the smoothness fed to the sampler
    is still ``L + 1/λ_k``.
    """
    if L < 0 or d < 1 or not 0 < r <= D:
        raise ValueError("need L >= 0, d >= 1 and 0 < r <= D")
    l_ref = L if L > 0 else 1.0

    def penalty(k):
        return 1.0 / (8.0 * d * d / (r * r) + d * math.exp(2.0 * k))

    def gamma(k):
        return scale.gamma_mult * math.exp(-4.0 * k) / (l_ref * d)

    def inner_count(k):
        return scale.count(l_ref * d * k * k * math.exp(5.0 * k))

    return DoubleLoopSchedule(
        gamma=gamma,
        inner_count=inner_count,
        clip_radius=lambda k: D * k,
        penalty=penalty,
        scale=scale,
        kind="dl-myula",
        lipschitz=L,
        step_warning=_flag(gamma(1), L + 1.0 / penalty(1), d),
    )


@dataclass(frozen=True)
class StepSequence:
    """Single-loop step sizes ``γ_k = gamma0 * k^{-alpha}`` for ``k >= 1``."""

    gamma0: float
    alpha: float = 0.0

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must lie in [0, 1]")

    def __call__(self, k: int) -> float:
        if k < 1:
            raise ValueError("steps are indexed from 1")
        if self.alpha == 0:
            return self.gamma0
        return self.gamma0 * k ** (-self.alpha)


def polynomial_schedule(gamma0: float, alpha: float) -> StepSequence:
    return StepSequence(gamma0, alpha)


def total_iterations(s: DoubleLoopSchedule, K: int) -> int:
    """``sum_{k=1}^{K} n_k``."""
    if K < 0:
        raise ValueError("K must be nonnegative")
    total = 0
    for k in range(1, K + 1):
        total += int(s.inner_count(k))
        if total > _INT64_MAX:
            raise OverflowError(f"total iteration count exceeds 2^63 - 1 at k={k}")
    return total
