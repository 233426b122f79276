"""Distances between sample clouds and closed forms for Gaussian oracles."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from . import rng as _rng
from .targets import GaussianOracle

__all__ = [
    "EmpiricalMeasure",
    "HistogramSpec",
    "w2_1d",
    "sliced_w2",
    "histogram_probs",
    "tv_histogram",
    "tv_binned",
    "kl_gaussian",
    "w2_gaussian",
    "tv_gaussian_1d",
    "gaussian_crossings",
    "pinsker_tv_bound",
    "ula_gaussian_law",
    "DEFAULT_N_PROJ",
]

Array = np.ndarray
DEFAULT_N_PROJ = 128


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud; ``points`` has shape ``(n, dim)``."""

    points: Array
    weights: Array

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("need a nonempty (n, dim) array of points")
        if weights is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        else:
            w = np.asarray(weights, dtype=float)
            if w.shape != (pts.shape[0],):
                raise ValueError("one weight per point required")
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
                raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def uniform(self) -> bool:
        return bool(np.all(self.weights == self.weights[0]))

    @property
    def effective_size(self) -> float:
        return 1.0 / float(np.sum(self.weights**2))

    def norms(self) -> Array:
        return np.linalg.norm(self.points, axis=1)

    def mean(self) -> Array:
        return self.weights @ self.points

    def mean_norm_sq(self) -> float:
        return float(self.weights @ np.einsum("ij,ij->i", self.points, self.points))

    def project(self, direction) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points @ np.asarray(direction, dtype=float), self.weights)


def _as_1d(m: EmpiricalMeasure) -> Array:
    if m.dim != 1:
        raise ValueError(f"w2_1d needs one-dimensional measures, got dim {m.dim}")
    return m.points[:, 0]


def w2_1d(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """Exact 2-Wasserstein distance on the line via the quantile coupling."""
    xa, xb = _as_1d(a), _as_1d(b)
    if a.size == b.size and a.uniform and b.uniform:
        d = np.sort(xa) - np.sort(xb)
        return math.sqrt(float(np.mean(d * d)))
    oa, ob = np.argsort(xa, kind="stable"), np.argsort(xb, kind="stable")
    xa, wa = xa[oa], a.weights[oa]
    xb, wb = xb[ob], b.weights[ob]
    ca, cb = np.cumsum(wa), np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    t = np.union1d(ca, cb)
    t = t[(t > 0) & (t <= 1.0)]
    dt = np.diff(np.concatenate([[0.0], t]))
    mid = t - dt / 2
    ia = np.minimum(np.searchsorted(ca, mid, side="left"), xa.size - 1)
    ib = np.minimum(np.searchsorted(cb, mid, side="left"), xb.size - 1)
    return math.sqrt(float(np.sum(dt * (xa[ia] - xb[ib]) ** 2)))


def _directions(dim: int, n_proj: int, seed: int) -> Array:
    keys = _rng.chain_keys(seed, np.arange(n_proj))
    g = _rng.normal_block(keys, _rng.STREAM_PROJECTIONS, 0, dim)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def sliced_w2(a: EmpiricalMeasure, b: EmpiricalMeasure, n_proj: int = DEFAULT_N_PROJ, seed: int = 0) -> float:
    """Root-mean-square of 1-D W2 over ``n_proj`` random directions."""
    if a.dim != b.dim:
        raise ValueError("measures live in different dimensions")
    if n_proj < 1:
        raise ValueError("n_proj must be positive")
    if a.dim == 1:
        return w2_1d(a, b)
    dirs = _directions(a.dim, n_proj, seed)
    sq = [w2_1d(a.project(u), b.project(u)) ** 2 for u in dirs]
    return math.sqrt(float(np.mean(sq)))


# ---------------------------------------------------------------------------
# total variation on a shared grid


@dataclass(frozen=True)
class HistogramSpec:
    """Regular grid on ``[lo, hi]`` with one extra bin for everything outside."""

    lo: Array
    hi: Array
    bins_per_dim: int

    def __init__(self, lo, hi, bins_per_dim: int = 64):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lo and hi must be vectors of equal length")
        if not np.all(lo < hi):
            raise ValueError("need lo < hi componentwise")
        if int(bins_per_dim) < 2:
            raise ValueError("bins_per_dim must be at least 2")
        if float(bins_per_dim) ** lo.shape[0] > 5e7:
            raise ValueError("histogram grid too large for this dimension")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "bins_per_dim", int(bins_per_dim))

    @classmethod
    def cube(cls, half_width: float, dim: int, bins_per_dim: int = 64) -> "HistogramSpec":
        return cls(np.full(dim, -half_width), np.full(dim, half_width), bins_per_dim)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def n_cells(self) -> int:
        return self.bins_per_dim**self.dim

    def edges(self, j: int) -> Array:
        return np.linspace(self.lo[j], self.hi[j], self.bins_per_dim + 1)

    def scaled(self, M: float) -> "HistogramSpec":
        return HistogramSpec(self.lo * M, self.hi * M, self.bins_per_dim)


def _empirical_probs(m: EmpiricalMeasure, spec: HistogramSpec) -> Array:
    B = spec.bins_per_dim
    pts = m.points
    inside = np.all((pts >= spec.lo) & (pts <= spec.hi), axis=1)
    rel = (pts[inside] - spec.lo) / (spec.hi - spec.lo)
    idx = np.minimum(np.floor(rel * B).astype(np.int64), B - 1)
    flat = np.ravel_multi_index(tuple(idx.T), (B,) * spec.dim) if idx.size else np.zeros(0, dtype=np.int64)
    probs = np.bincount(flat, weights=m.weights[inside], minlength=spec.n_cells)
    overflow = float(m.weights[~inside].sum())
    return np.append(probs, overflow)


def _gaussian_probs(g: GaussianOracle, spec: HistogramSpec) -> Array:
    per_dim = []
    for j in range(spec.dim):
        z = (spec.edges(j) - g.mean[j]) / math.sqrt(g.variances[j])
        per_dim.append(np.diff(ndtr(z)))
    cells = per_dim[0]
    for p in per_dim[1:]:
        cells = np.multiply.outer(cells, p)
    cells = np.ravel(cells)
    return np.append(cells, max(0.0, 1.0 - float(cells.sum())))


def histogram_probs(m: Union[EmpiricalMeasure, GaussianOracle, Array], spec: HistogramSpec) -> Array:
    """Cell masses (overflow last) of a cloud, an exact Gaussian, or a given vector."""
    if isinstance(m, EmpiricalMeasure):
        if m.dim != spec.dim:
            raise ValueError("measure and histogram dimensions differ")
        return _empirical_probs(m, spec)
    if isinstance(m, GaussianOracle):
        if m.dim != spec.dim:
            raise ValueError("oracle and histogram dimensions differ")
        return _gaussian_probs(m, spec)
    p = np.asarray(m, dtype=float)
    if p.shape != (spec.n_cells + 1,):
        raise ValueError("probability vector does not match the histogram grid")
    return p


def tv_binned(p: Array, q: Array) -> float:
    return min(1.0, 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q)))))


def tv_histogram(a, b, spec: HistogramSpec) -> float:
    """TV distance between the binned versions of ``a`` and ``b``.

    Either side may be an :class:`EmpiricalMeasure`, a :class:`GaussianOracle`
    (binned exactly), or a precomputed cell-mass vector. Binning can only merge
    mass, so the result never exceeds the TV of the underlying laws.
    """
    return tv_binned(histogram_probs(a, spec), histogram_probs(b, spec))


# ---------------------------------------------------------------------------
# Gaussian closed forms


def kl_gaussian(a: GaussianOracle, b: GaussianOracle) -> float:
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    r = a.variances / b.variances
    dm = a.mean - b.mean
    return float(0.5 * np.sum(r - 1.0 - np.log(r) + dm * dm / b.variances))


def w2_gaussian(a: GaussianOracle, b: GaussianOracle) -> float:
    if a.dim != b.dim:
        raise ValueError("dimension mismatch")
    dm = a.mean - b.mean
    ds = np.sqrt(a.variances) - np.sqrt(b.variances)
    return math.sqrt(float(dm @ dm + ds @ ds))


def gaussian_crossings(a: GaussianOracle, b: GaussianOracle) -> list[float]:
    """Points where two 1-D Gaussian densities are equal."""
    m1, v1 = float(a.mean[0]), float(a.variances[0])
    m2, v2 = float(b.mean[0]), float(b.variances[0])
    # (x-m1)^2/v1 + ln v1 = (x-m2)^2/v2 + ln v2
    qa = 1.0 / v1 - 1.0 / v2
    qb = -2.0 * (m1 / v1 - m2 / v2)
    qc = m1 * m1 / v1 - m2 * m2 / v2 + math.log(v1 / v2)
    if qa == 0.0:
        return [] if qb == 0.0 else [-qc / qb]
    disc = qb * qb - 4 * qa * qc
    if disc < 0:
        return []
    s = math.sqrt(disc)
    return sorted([(-qb - s) / (2 * qa), (-qb + s) / (2 * qa)])


def tv_gaussian_1d(a: GaussianOracle, b: GaussianOracle) -> float:
    """Exact TV between 1-D Gaussians.

    Equal variances use ``2Φ(|Δm|/2σ) - 1``; otherwise ``½∫|p - q|`` is
    integrated adaptively between the density crossings.
    """
    if a.dim != 1 or b.dim != 1:
        raise ValueError("tv_gaussian_1d needs one-dimensional oracles")
    m1, v1 = float(a.mean[0]), float(a.variances[0])
    m2, v2 = float(b.mean[0]), float(b.variances[0])
    if v1 == v2:
        return float(2.0 * ndtr(abs(m1 - m2) / (2.0 * math.sqrt(v1))) - 1.0)
    s1, s2 = math.sqrt(v1), math.sqrt(v2)

    def half_gap(x):
        p = math.exp(-0.5 * ((x - m1) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
        q = math.exp(-0.5 * ((x - m2) / s2) ** 2) / (s2 * math.sqrt(2 * math.pi))
        return 0.5 * abs(p - q)

    spread = 40.0 * max(s1, s2)
    lo = min(m1, m2) - spread
    hi = max(m1, m2) + spread
    knots = [lo] + [c for c in gaussian_crossings(a, b) if lo < c < hi] + [hi]
    total = 0.0
    for u, v in zip(knots[:-1], knots[1:]):
        val, _ = quad(half_gap, u, v, epsabs=1e-12, epsrel=1e-12, limit=200)
        total += val
    return total


def pinsker_tv_bound(kl: float) -> float:
    """``sqrt(KL / 2)``, an upper bound on TV."""
    if kl < 0:
        raise ValueError("KL divergence cannot be negative")
    return math.sqrt(kl / 2.0)


def ula_gaussian_law(x0: float, sigma0_sq: float, gamma: float, n: int) -> tuple[float, float]:
    """Law of the n-th ULA iterate on N(0, 1) started from N(x0, σ0²).

    Each step maps mean ``m -> (1-γ) m`` and variance ``s -> (1-γ)^2 s + 2γ``.
    """
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")
    if n < 0:
        raise ValueError("n must be nonnegative")
    var = float(sigma0_sq)
    a = (1.0 - gamma) ** 2
    for _ in range(n):
        var = a * var + 2.0 * gamma
    return (1.0 - gamma) ** n * x0, var
