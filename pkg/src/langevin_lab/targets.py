"""Log-concave targets ``mu ∝ exp(-f)`` and their moment/tail bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

__all__ = [
    "TailParams",
    "Potential",
    "GaussianOracle",
    "eval_potential",
    "grad_potential",
    "second_moment_bound",
    "tail_probability_bound",
    "light_tail_bound",
    "zero_potential",
    "pseudo_huber_potential",
    "centered",
    "midpoint_convexity_gap",
    "lipschitz_ratio",
    "tail_condition_gap",
    "finite_difference_error",
    "TARGET_KINDS",
    "make_target",
]

Array = np.ndarray


@dataclass(frozen=True)
class TailParams:
    """Light-tail constants: ``f(x) - f(x*) >= eta * |x - x*|`` once ``|x| >= m_eta``."""

    eta: float
    m_eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not self.m_eta >= 0:
            raise ValueError(f"m_eta must be nonnegative, got {self.m_eta}")


@dataclass(frozen=True)
class Potential:
    """Differentiable convex potential ``f`` on R^dim.

    ``value`` and ``gradient`` act on the last axis, so a batch of points of
    shape ``(n, dim)`` can be evaluated in one call.
    """

    dim: int
    value: Callable[[Array], Array]
    gradient: Callable[[Array], Array]
    lipschitz: float
    tail: Optional[TailParams] = None
    minimizer: Optional[Array] = None
    name: str = "potential"
    # (mean, variances) when the gradient is (x - mean) / variances; lets the
    # sampler run whole loops in compiled code
    affine: Optional[tuple] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        if not self.lipschitz >= 0:
            raise ValueError("lipschitz constant must be nonnegative")

    @property
    def x_star(self) -> Array:
        return np.zeros(self.dim) if self.minimizer is None else np.asarray(self.minimizer, float)


def _check_dim(p_dim: int, x: Array) -> Array:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0 or x.shape[-1] != p_dim:
        raise ValueError(f"expected points of dimension {p_dim}, got shape {x.shape}")
    return x


def eval_potential(p: Potential, x) -> float | Array:
    x = _check_dim(p.dim, x)
    v = p.value(x)
    return float(v) if x.ndim == 1 else v


def grad_potential(p: Potential, x) -> Array:
    x = _check_dim(p.dim, x)
    return p.gradient(x)


def second_moment_bound(t: TailParams, d: int) -> float:
    """Upper bound ``2d(d+1)/eta^2 + M_eta^2`` on ``E|X|^2``."""
    if d < 1:
        raise ValueError("d must be positive")
    return 2.0 * d * (d + 1) / t.eta**2 + t.m_eta**2


def tail_probability_bound(R: float) -> float:
    """``exp(1 - R)`` bound on ``P(|X| > R C)`` when ``E|X|^2 <= C^2``.

    Only meaningful for ``R > 1``; smaller ``R`` returns the vacuous value 1.
    """
    if R <= 1:
        return 1.0
    return math.exp(1.0 - R)


def light_tail_bound(t: TailParams, d: int, R: float) -> tuple[float, float]:
    """Radius and probability such that ``P(|X| > radius) < prob``."""
    radius = R * math.sqrt(second_moment_bound(t, d))
    return radius, tail_probability_bound(R)


@dataclass(frozen=True)
class GaussianOracle:
    """Diagonal Gaussian with closed-form divergences and exact sampling."""

    mean: Array
    variances: Array

    def __post_init__(self):
        m = np.atleast_1d(np.asarray(self.mean, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if m.shape != v.shape or m.ndim != 1:
            raise ValueError("mean and variances must be vectors of equal length")
        if np.any(v <= 0) or not np.all(np.isfinite(v)):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "variances", v)

    @classmethod
    def standard(cls, dim: int) -> "GaussianOracle":
        return cls(np.zeros(dim), np.ones(dim))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def second_moment(self) -> float:
        return float(np.sum(self.variances) + self.mean @ self.mean)

    def tail(self) -> TailParams:
        # |x-m|^2 / (2 s^2) >= |x-m| / s once |x-m| >= 2 s, which |x| >= 2 s + |m|
        # guarantees; s is the largest std
        s = float(np.sqrt(self.variances.max()))
        return TailParams(eta=1.0 / s, m_eta=2.0 * s + float(np.linalg.norm(self.mean)))

    def potential(self) -> Potential:
        m, v = self.mean, self.variances

        def value(x):
            return np.sum((x - m) ** 2 / (2.0 * v), axis=-1)

        def gradient(x):
            return (x - m) / v

        return Potential(
            dim=self.dim,
            value=value,
            gradient=gradient,
            lipschitz=float(1.0 / v.min()),
            tail=self.tail(),
            minimizer=m.copy(),
            name="gaussian",
            affine=(m.copy(), v.copy()),
        )


def zero_potential(dim: int) -> Potential:
    """``f ≡ 0``; paired with a convex body this is the uniform law on it."""
    return Potential(
        dim=dim,
        value=lambda x: np.zeros(np.shape(x)[:-1]),
        gradient=lambda x: np.zeros(np.shape(x)),
        lipschitz=0.0,
        name="uniform",
        affine=(np.zeros(dim), np.full(dim, np.inf)),
    )


def pseudo_huber_potential(dim: int, scale: float = 1.0) -> Potential:
    """``f(x) = sum_i s(sqrt(1 + (x_i/s)^2) - 1)``: log-concave but not strongly so.

    Each coordinate term is at least ``|x_i| - s``, so ``f(x) >= |x|/2`` for
    ``|x| >= 2 d s``.
    """
    s = float(scale)

    def value(x):
        return np.sum(s * (np.sqrt(1.0 + (x / s) ** 2) - 1.0), axis=-1)

    def gradient(x):
        return (x / s) / np.sqrt(1.0 + (x / s) ** 2)

    return Potential(
        dim=dim,
        value=value,
        gradient=gradient,
        lipschitz=1.0 / s,
        tail=TailParams(eta=0.5, m_eta=2.0 * dim * s),
        name="pseudo-huber",
    )


def centered(p: Potential) -> Potential:
    """Shift ``p`` so that its minimiser is the origin and ``f(0) = 0``."""
    x_star = p.x_star
    f_star = float(p.value(x_star))
    if not np.any(x_star) and f_star == 0.0:
        return p
    return Potential(
        dim=p.dim,
        value=lambda x: p.value(np.asarray(x) + x_star) - f_star,
        gradient=lambda x: p.gradient(np.asarray(x) + x_star),
        lipschitz=p.lipschitz,
        tail=p.tail,
        minimizer=np.zeros(p.dim),
        name=p.name,
    )


# ---------------------------------------------------------------------------
# empirical checks of the structural assumptions


def _pairs(dim: int, n: int, spread: float, seed: int) -> tuple[Array, Array]:
    rng = np.random.default_rng(seed)
    return rng.normal(scale=spread, size=(n, dim)), rng.normal(scale=spread, size=(n, dim))


def midpoint_convexity_gap(p: Potential, n_pairs: int = 1000, spread: float = 3.0, seed: int = 0) -> float:
    """Largest ``f((x+y)/2) - (f(x)+f(y))/2`` over random pairs; <= 0 for convex f."""
    x, y = _pairs(p.dim, n_pairs, spread, seed)
    return float(np.max(p.value((x + y) / 2) - (p.value(x) + p.value(y)) / 2))


def lipschitz_ratio(p: Potential, n_pairs: int = 1000, spread: float = 3.0, seed: int = 0) -> float:
    """Largest ``|∇f(x) - ∇f(y)| / (L |x - y|)`` over random pairs; <= 1 when L is valid."""
    x, y = _pairs(p.dim, n_pairs, spread, seed)
    num = np.linalg.norm(p.gradient(x) - p.gradient(y), axis=-1)
    den = np.linalg.norm(x - y, axis=-1)
    if p.lipschitz == 0:
        return 0.0 if np.all(num == 0) else math.inf
    return float(np.max(num / (p.lipschitz * den)))


def tail_condition_gap(p: Potential, radii=None, n_dirs: int = 256, seed: int = 0) -> float:
    """Smallest ``f(x) - f(x*) - eta |x - x*|`` over points with ``|x| >= m_eta``.

    Nonnegative when the declared tail parameters hold on the probed grid.
    """
    if p.tail is None:
        raise ValueError("potential has no tail parameters")
    t = p.tail
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, p.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if radii is None:
        radii = t.m_eta * np.array([1.0, 1.5, 2.0, 4.0, 8.0]) + 1e-9
    x_star = p.x_star
    f_star = float(p.value(x_star))
    worst = math.inf
    for rad in radii:
        x = dirs * rad
        x = x[np.linalg.norm(x, axis=1) >= t.m_eta]
        gap = p.value(x) - f_star - t.eta * np.linalg.norm(x - x_star, axis=1)
        worst = min(worst, float(np.min(gap)))
    return worst


def finite_difference_error(p: Potential, n_points: int = 100, h: float = 1e-5, seed: int = 0) -> float:
    """Max relative gap between ``gradient`` and central differences of ``value``."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=2.0, size=(n_points, p.dim))
    eye = np.eye(p.dim) * h
    fd = np.stack(
        [(p.value(pts + eye[i]) - p.value(pts - eye[i])) / (2 * h) for i in range(p.dim)],
        axis=-1,
    )
    g = p.gradient(pts)
    err = np.linalg.norm(fd - g, axis=1) / np.maximum(np.linalg.norm(g, axis=1), 1.0)
    return float(err.max())


# ---------------------------------------------------------------------------
# registry used by experiment configs

TARGET_KINDS = ("gaussian", "uniform", "pseudo-huber")


def make_target(spec: dict) -> Potential:
    """Build a potential from a config entry such as ``{"kind": "gaussian", ...}``."""
    kind = spec.get("kind")
    if kind == "gaussian":
        return GaussianOracle(spec["mean"], spec["variances"]).potential()
    if kind == "uniform":
        return zero_potential(int(spec["dim"]))
    if kind == "pseudo-huber":
        return pseudo_huber_potential(int(spec["dim"]), float(spec.get("scale", 1.0)))
    raise KeyError(f"unknown target kind {kind!r}; expected one of {TARGET_KINDS}")
