"""Convex bodies, Euclidean projections and the Moreau-Yosida penalty."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .targets import Potential

__all__ = [
    "ConvexBody",
    "ProjectionConvergenceError",
    "project_ball",
    "project_box",
    "project_simplex",
    "project_polytope",
    "ball_body",
    "box_body",
    "simplex_body",
    "polytope_body",
    "BODY_KINDS",
    "make_body",
    "MoreauYosidaPotential",
    "my_gradient",
    "my_lipschitz",
    "my_bias_bound",
    "constrained_tail_bound",
]

Array = np.ndarray


class ProjectionConvergenceError(RuntimeError):
    """Dykstra's iteration hit its iteration cap; ``last`` holds the final iterate."""

    def __init__(self, message: str, last: Array):
        super().__init__(message)
        self.last = last


def project_ball(center, radius: float, x) -> Array:
    """Radial projection onto the closed ball ``B(center, radius)``. Acts on the last axis."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    x = np.asarray(x, dtype=float)
    c = np.asarray(center, dtype=float)
    diff = x - c
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    outside = norm > radius
    scale = np.where(outside, radius / np.where(outside, norm, 1.0), 1.0)
    return np.where(outside, c + diff * scale, x)


def project_box(lo, hi, x) -> Array:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise ValueError("box bounds must satisfy lo <= hi componentwise")
    return np.clip(np.asarray(x, dtype=float), lo, hi)


def project_simplex(x) -> Array:
    """Projection onto ``{y >= 0, sum(y) = 1}`` by sorting and thresholding."""
    x = np.asarray(x, dtype=float)
    flat = np.atleast_2d(x)
    d = flat.shape[-1]
    u = -np.sort(-flat, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    ks = np.arange(1, d + 1)
    cond = u - css / ks > 0
    rho = d - 1 - np.argmax(cond[:, ::-1], axis=-1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    out = np.maximum(flat - theta[:, None], 0.0)
    return out.reshape(x.shape)


def project_polytope(halfspaces, x, tol: float = 1e-8, max_iter: int = 10_000) -> Array:
    """Dykstra's alternating projections onto ``{y : a_i . y <= b_i}``.

    Rows of a batch stop updating individually once converged, so a point's
    projection does not depend on what else is in the batch.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = np.array([np.asarray(a, dtype=float) for a, _ in halfspaces])
    b = np.array([float(bi) for _, bi in halfspaces])
    x = np.asarray(x, dtype=float)
    pts = np.atleast_2d(x).copy()
    m = A.shape[0]
    norms_sq = np.einsum("ij,ij->i", A, A)

    viol = pts @ A.T - b
    active = np.any(viol > 0, axis=1)
    incr = np.zeros((m,) + pts.shape)
    it = 0
    while np.any(active):
        if it >= max_iter:
            raise ProjectionConvergenceError(
                f"Dykstra projection did not converge in {max_iter} sweeps", pts.reshape(x.shape)
            )
        rows = np.flatnonzero(active)
        y = pts[rows]
        start = y.copy()
        for i in range(m):
            z = y + incr[i, rows]
            s = np.maximum(z @ A[i] - b[i], 0.0) / norms_sq[i]
            y_new = z - s[:, None] * A[i]
            incr[i, rows] = z - y_new
            y = y_new
        pts[rows] = y
        change = np.linalg.norm(y - start, axis=1)
        worst = np.max(y @ A.T - b, axis=1)
        done = (change <= tol * 0.1) & (worst <= tol)
        active[rows[done]] = False
        it += 1
    return pts.reshape(x.shape)


@dataclass(frozen=True)
class ConvexBody:
    """Closed convex set with its projection and containment radii.

    ``inner_radius`` r and ``outer_radius`` D satisfy ``B(0, r) ⊆ body ⊆ B(0, D)``.
    ``delta1`` is the potential-gap constant ``exp(inf_{outside} f - max_{body} f)``,
    which cannot be estimated from oracles and is supplied by the caller.
    """

    kind: str
    dim: int
    contains: Callable[[Array], Array]
    project: Callable[[Array], Array]
    inner_radius: float
    outer_radius: float
    delta1: float = 1.0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inner_radius < 0 or self.outer_radius < self.inner_radius:
            raise ValueError("need 0 <= inner_radius <= outer_radius")
        if not 0 < self.delta1 <= 1:
            raise ValueError("delta1 must lie in (0, 1]")


def ball_body(radius: float, dim: int, center=None, delta1: float = 1.0) -> ConvexBody:
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    off = float(np.linalg.norm(c))
    return ConvexBody(
        kind="ball",
        dim=dim,
        contains=lambda x: np.linalg.norm(np.asarray(x) - c, axis=-1) <= radius * (1 + 1e-12),
        project=lambda x: project_ball(c, radius, x),
        inner_radius=max(radius - off, 0.0),
        outer_radius=radius + off,
        delta1=delta1,
        params={"radius": float(radius), "center": c.tolist()},
    )


def box_body(lo, hi, delta1: float = 1.0) -> ConvexBody:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if lo.shape != hi.shape or np.any(lo > hi):
        raise ValueError("box bounds must satisfy lo <= hi componentwise")
    inner = float(np.min(np.minimum(-lo, hi)))
    return ConvexBody(
        kind="box",
        dim=lo.shape[0],
        contains=lambda x: np.all((np.asarray(x) >= lo) & (np.asarray(x) <= hi), axis=-1),
        project=lambda x: project_box(lo, hi, x),
        inner_radius=max(inner, 0.0),
        outer_radius=float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))),
        delta1=delta1,
        params={"lo": lo.tolist(), "hi": hi.tolist(), "bbox": (lo.tolist(), hi.tolist())},
    )


def simplex_body(dim: int, tol: float = 1e-9) -> ConvexBody:
    """Probability simplex. It has empty interior, so its inner radius is 0."""

    def contains(x):
        x = np.asarray(x)
        return np.all(x >= -tol, axis=-1) & (np.abs(x.sum(axis=-1) - 1.0) <= tol)

    return ConvexBody(
        kind="simplex",
        dim=dim,
        contains=contains,
        project=project_simplex,
        inner_radius=0.0,
        outer_radius=1.0,
        params={"bbox": ([0.0] * dim, [1.0] * dim)},
    )


def polytope_body(halfspaces: Sequence, tol: float = 1e-8, max_iter: int = 10_000, delta1: float = 1.0) -> ConvexBody:
    """Bounded polytope ``{a_i . y <= b_i}``; radii are computed, not supplied."""
    hs = [(np.asarray(a, dtype=float), float(b)) for a, b in halfspaces]
    A = np.array([a for a, _ in hs])
    b = np.array([bi for _, bi in hs])
    dim = A.shape[1]
    lo, hi = np.empty(dim), np.empty(dim)
    for j in range(dim):
        for sign, store in ((1.0, lo), (-1.0, hi)):
            c = np.zeros(dim)
            c[j] = sign
            res = linprog(c, A_ub=A, b_ub=b, bounds=[(None, None)] * dim, method="highs")
            if res.status == 3:
                raise ValueError("polytope is unbounded")
            if res.status != 0:
                raise ValueError(f"polytope bounding box failed: {res.message}")
            store[j] = sign * res.fun
    dists = b / np.linalg.norm(A, axis=1)
    return ConvexBody(
        kind="polytope",
        dim=dim,
        contains=lambda x: np.all(np.asarray(x) @ A.T - b <= tol, axis=-1),
        project=lambda x: project_polytope(hs, x, tol=tol, max_iter=max_iter),
        inner_radius=max(float(dists.min()), 0.0),
        outer_radius=float(np.linalg.norm(np.maximum(np.abs(lo), np.abs(hi)))),
        delta1=delta1,
        params={
            "halfspaces": [[a.tolist(), bi] for a, bi in hs],
            "bbox": (lo.tolist(), hi.tolist()),
        },
    )


BODY_KINDS = ("ball", "box", "simplex", "polytope")


def make_body(spec: dict, dim: int | None = None) -> ConvexBody:
    kind = spec.get("kind")
    delta1 = float(spec.get("delta1", 1.0))
    if kind == "ball":
        d = int(spec.get("dim", dim or 0))
        return ball_body(float(spec["radius"]), d, spec.get("center"), delta1=delta1)
    if kind == "box":
        return box_body(spec["lo"], spec["hi"], delta1=delta1)
    if kind == "simplex":
        return simplex_body(int(spec.get("dim", dim or 0)))
    if kind == "polytope":
        return polytope_body([(row[0], row[1]) for row in spec["halfspaces"]], delta1=delta1)
    raise KeyError(f"unknown body kind {kind!r}; expected one of {BODY_KINDS}")


# ---------------------------------------------------------------------------
# Moreau-Yosida penalised target


@dataclass(frozen=True)
class MoreauYosidaPotential:
    """``f_λ(x) = f(x) + |x - proj(x)|^2 / (2λ)``, smooth on all of R^d."""

    base: Potential
    body: ConvexBody
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.base.dim != self.body.dim:
            raise ValueError("potential and body dimensions differ")

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def lipschitz(self) -> float:
        return my_lipschitz(self.base.lipschitz, self.lam)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        r = x - self.body.project(x)
        return self.base.value(x) + np.sum(r * r, axis=-1) / (2.0 * self.lam)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return self.base.gradient(x) + (x - self.body.project(x)) / self.lam

    def as_potential(self) -> Potential:
        return Potential(
            dim=self.dim,
            value=self.value,
            gradient=self.gradient,
            lipschitz=self.lipschitz,
            tail=None,
            minimizer=self.base.minimizer,
            name=f"my[{self.base.name},{self.body.kind},{self.lam:g}]",
        )


def my_gradient(p: MoreauYosidaPotential, x) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != p.dim:
        raise ValueError(f"expected points of dimension {p.dim}, got shape {x.shape}")
    return p.gradient(x)


def my_lipschitz(L: float, lam: float) -> float:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return L + 1.0 / lam


def my_bias_bound(c_omega: float, d: int, lam: float, r: float) -> float:
    """Upper bound ``C_Ω^2 d sqrt(λ)`` on the squared W2 bias of the penalised law.

    Valid only for ``λ < r^2 / (8 d^2)``.
    """
    limit = r * r / (8.0 * d * d)
    if not 0 < lam < limit:
        raise ValueError(f"lambda={lam} outside the validity range (0, {limit})")
    return c_omega**2 * d * math.sqrt(lam)


def constrained_tail_bound(sigma: float, D: float, R: float) -> float:
    """``σ exp(-R/D)`` bound on ``P(|X| >= R)`` under the penalised law."""
    if not (sigma > 0 and D > 0 and R >= 0):
        raise ValueError("need sigma > 0, D > 0, R >= 0")
    return sigma * math.exp(-R / D)
