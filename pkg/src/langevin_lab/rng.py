"""Counter-based random streams.

Every draw is a pure function of ``(key, outer_k, inner_n, lane)``, where
``key`` is derived from ``(seed, chain_id)``. There is no hidden generator
state, so a chain produces the same numbers whether it is simulated alone,
inside a vectorised batch, or on another worker.

The mixing function is the SplitMix64 finaliser, a bijection on 64-bit
words. Gaussians use the polar form of the Box-Muller transform; rejected
pairs simply consume the next two lanes of the same counter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

__all__ = [
    "RngState",
    "chain_keys",
    "step_counter",
    "normal_block",
    "uniform_block",
    "index_draw",
    "ula_update",
    "ula_affine_run",
    "STREAM_REFERENCE",
    "STREAM_PROJECTIONS",
]

_GOLDEN = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_INNER_BITS = 40
_MAX_OUTER = (1 << 23) - 1

# reserved outer indices for draws that do not belong to a sampler step
STREAM_REFERENCE = _MAX_OUTER
STREAM_PROJECTIONS = _MAX_OUTER - 1


def _mix_py(z: int) -> int:
    z &= _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


@njit(cache=True, inline="always")
def _mix(z):
    z = z ^ (z >> uint64(30))
    z = z * uint64(0xBF58476D1CE4E5B9)
    z = z ^ (z >> uint64(27))
    z = z * uint64(0x94D049BB133111EB)
    return z ^ (z >> uint64(31))


@njit(cache=True, inline="always")
def _unit(h):
    # 53-bit uniform on the open interval (0, 1)
    return (np.float64(h >> uint64(11)) + 0.5) * 1.1102230246251565e-16


@njit(cache=True, inline="always")
def _signed_unit(h):
    # 53-bit uniform on the open interval (-1, 1)
    return (np.float64(h >> uint64(11)) + 0.5) * 2.220446049250313e-16 - 1.0


@njit(cache=True, inline="always")
def _fill_normals(base, dim, buf):
    g = uint64(0x9E3779B97F4A7C15)
    lane = uint64(0)
    j = 0
    while j < dim:
        while True:
            u = _signed_unit(_mix(base + lane * g))
            lane += uint64(1)
            v = _signed_unit(_mix(base + lane * g))
            lane += uint64(1)
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        f = np.sqrt(-2.0 * np.log(s) / s)
        buf[j] = u * f
        if j + 1 < dim:
            buf[j + 1] = v * f
        j += 2


@njit(cache=True, nogil=True)
def _normal_kernel(keys, ctr, out):
    mc = _mix(ctr)
    for c in range(keys.shape[0]):
        _fill_normals(_mix(keys[c] ^ mc), out.shape[1], out[c])


@njit(cache=True)
def _uniform_kernel(keys, ctr, out):
    g = uint64(0x9E3779B97F4A7C15)
    mc = _mix(ctr)
    for c in range(keys.shape[0]):
        base = _mix(keys[c] ^ mc)
        for j in range(out.shape[1]):
            out[c, j] = _unit(_mix(base + uint64(j) * g))


@njit(cache=True)
def _index_kernel(keys, ctr, n, out):
    mc = _mix(ctr)
    un = uint64(n)
    for c in range(keys.shape[0]):
        h = _mix(_mix(keys[c] ^ mc))
        out[c] = np.int64(h % un) + 1


@njit(cache=True, nogil=True)
def _ula_kernel(x, drift, gamma, keys, ctr, out, snap_index, inner_n, snapshot, blowup_sq):
    dim = x.shape[1]
    scale = np.sqrt(2.0 * gamma)
    mc = _mix(ctr)
    buf = np.empty(dim)
    bad = -1
    for c in range(x.shape[0]):
        _fill_normals(_mix(keys[c] ^ mc), dim, buf)
        sq = 0.0
        for j in range(dim):
            v = x[c, j] - gamma * drift[c, j] + scale * buf[j]
            out[c, j] = v
            sq += v * v
        if snap_index[c] == inner_n:
            for j in range(dim):
                snapshot[c, j] = out[c, j]
        if bad < 0 and not (sq <= blowup_sq):
            bad = c
    return bad


@njit(cache=True, inline="always")
def _normal_pair(base):
    # _fill_normals for dim 2, returned as scalars
    g = uint64(0x9E3779B97F4A7C15)
    lane = uint64(0)
    while True:
        u = _signed_unit(_mix(base + lane * g))
        lane += uint64(1)
        v = _signed_unit(_mix(base + lane * g))
        lane += uint64(1)
        s = u * u + v * v
        if 0.0 < s < 1.0:
            break
    f = np.sqrt(-2.0 * np.log(s) / s)
    return u * f, v * f


@njit(cache=True)
def _step_tables(gammas, outer_k):
    # per-step noise scale and mixed counter, shared by every chain
    n_steps = gammas.shape[0]
    scales = np.empty(n_steps)
    mixed = np.empty(n_steps, dtype=np.uint64)
    for i in range(1, n_steps + 1):
        scales[i - 1] = np.sqrt(2.0 * gammas[i - 1])
        mixed[i - 1] = _mix((uint64(outer_k) << uint64(40)) | uint64(i))
    return scales, mixed


@njit(cache=True, nogil=True)
def _affine_kernel_2d(x, mean, var, gammas, keys, outer_k, snap_index, snapshot, every, stored, blowup_sq, bad_step,
                      center, radius, lam):
    # same arithmetic, in the same order, as _affine_kernel with the state held in scalars
    m0, m1, v0, v1, c0, c1 = mean[0], mean[1], var[0], var[1], center[0], center[1]
    penalised = lam > 0.0
    n_steps = gammas.shape[0]
    scales, mixed = _step_tables(gammas, outer_k)
    for c in range(x.shape[0]):
        a, b = x[c, 0], x[c, 1]
        key, snap_at = keys[c], snap_index[c]
        for i in range(1, n_steps + 1):
            gamma = gammas[i - 1]
            scale = scales[i - 1]
            g0, g1 = _normal_pair(_mix(key ^ mixed[i - 1]))
            d0 = (a - m0) / v0
            d1 = (b - m1) / v1
            if penalised:
                e0 = a - c0
                e1 = b - c1
                norm = np.sqrt(0.0 + e0 * e0 + e1 * e1)
                if norm > radius:
                    s = radius / norm
                    d0 = d0 + (a - (c0 + e0 * s)) / lam
                    d1 = d1 + (b - (c1 + e1 * s)) / lam
                else:
                    d0 = d0 + 0.0 / lam
                    d1 = d1 + 0.0 / lam
            a = a - gamma * d0 + scale * g0
            b = b - gamma * d1 + scale * g1
            if snap_at == i:
                snapshot[c, 0] = a
                snapshot[c, 1] = b
            if every > 0 and i % every == 0:
                stored[i // every - 1, c, 0] = a
                stored[i // every - 1, c, 1] = b
            if not (0.0 + a * a + b * b <= blowup_sq):
                bad_step[c] = i
                break
        x[c, 0] = a
        x[c, 1] = b


@njit(cache=True, nogil=True)
def _affine_kernel(x, mean, var, gammas, keys, outer_k, snap_index, snapshot, every, stored, blowup_sq, bad_step,
                   center, radius, lam):
    n_chain, dim = x.shape
    buf = np.empty(dim)
    drift = np.empty(dim)
    penalised = lam > 0.0
    n_steps = gammas.shape[0]
    scales, mixed = _step_tables(gammas, outer_k)
    for c in range(n_chain):
        for i in range(1, n_steps + 1):
            gamma = gammas[i - 1]
            scale = scales[i - 1]
            _fill_normals(_mix(keys[c] ^ mixed[i - 1]), dim, buf)
            for j in range(dim):
                drift[j] = (x[c, j] - mean[j]) / var[j]
            if penalised:
                nsq = 0.0
                for j in range(dim):
                    diff = x[c, j] - center[j]
                    nsq += diff * diff
                norm = np.sqrt(nsq)
                if norm > radius:
                    s = radius / norm
                    for j in range(dim):
                        proj = center[j] + (x[c, j] - center[j]) * s
                        drift[j] = drift[j] + (x[c, j] - proj) / lam
                else:
                    for j in range(dim):
                        drift[j] = drift[j] + 0.0 / lam
            sq = 0.0
            for j in range(dim):
                v = x[c, j] - gamma * drift[j] + scale * buf[j]
                x[c, j] = v
                sq += v * v
            if snap_index[c] == i:
                for j in range(dim):
                    snapshot[c, j] = x[c, j]
            if every > 0 and i % every == 0:
                for j in range(dim):
                    stored[i // every - 1, c, j] = x[c, j]
            if not (sq <= blowup_sq):
                bad_step[c] = i
                break


def chain_keys(seed: int, chain_ids) -> np.ndarray:
    """Stream keys for the given chains of a run seeded with ``seed``.

    For a fixed seed the map ``chain_id -> key`` is injective.
    """
    if not 0 <= int(seed) <= _MASK64:
        raise ValueError(f"seed must fit in 64 unsigned bits, got {seed}")
    ids = np.atleast_1d(np.asarray(chain_ids, dtype=np.int64))
    if np.any(ids < 0):
        raise ValueError("chain ids must be nonnegative")
    base = _mix_py(int(seed))
    keys = [(base + ((int(i) * _GOLDEN) & _MASK64)) & _MASK64 for i in ids]
    return np.array([_mix_py(k) for k in keys], dtype=np.uint64)


def step_counter(outer_k: int, inner_n: int) -> np.uint64:
    if not 0 <= outer_k <= _MAX_OUTER:
        raise ValueError(f"outer index {outer_k} out of range")
    if not 0 <= inner_n < (1 << _INNER_BITS):
        raise ValueError(f"inner index {inner_n} out of range")
    return np.uint64((outer_k << _INNER_BITS) | inner_n)


def normal_block(keys: np.ndarray, outer_k: int, inner_n: int, dim: int) -> np.ndarray:
    """Standard normal draws, one row of length ``dim`` per key."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    out = np.empty((keys.shape[0], dim))
    _normal_kernel(keys, step_counter(outer_k, inner_n), out)
    return out


def uniform_block(keys: np.ndarray, outer_k: int, inner_n: int, dim: int) -> np.ndarray:
    """Uniform draws on (0, 1), one row of length ``dim`` per key."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    out = np.empty((keys.shape[0], dim))
    _uniform_kernel(keys, step_counter(outer_k, inner_n), out)
    return out


def index_draw(keys: np.ndarray, outer_k: int, n: int) -> np.ndarray:
    """Uniform integers on ``{1, ..., n}``, one per key.

    Uses the ``inner_n = 0`` counter, which no sampler step consumes.
    """
    if n < 1:
        raise ValueError("n must be positive")
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    out = np.empty(keys.shape[0], dtype=np.int64)
    _index_kernel(keys, step_counter(outer_k, 0), n, out)
    return out


def ula_update(
    x: np.ndarray,
    drift: np.ndarray,
    gamma: float,
    keys: np.ndarray,
    outer_k: int,
    inner_n: int,
    out: np.ndarray,
    snap_index: np.ndarray,
    snapshot: np.ndarray,
    blowup: float = 1e12,
) -> int:
    """Fused batch ULA step ``out = x - gamma * drift + sqrt(2 gamma) g``.

    Rows whose ``snap_index`` equals ``inner_n`` are copied into
    ``snapshot``. Returns the first row that is non-finite or whose norm
    exceeds ``blowup``, or -1.
    """
    return _ula_kernel(
        x, drift, float(gamma), keys, step_counter(outer_k, inner_n),
        out, snap_index, inner_n, snapshot, float(blowup) ** 2,
    )


def ula_affine_run(
    x: np.ndarray,
    mean: np.ndarray,
    var: np.ndarray,
    gammas: np.ndarray,
    keys: np.ndarray,
    outer_k: int,
    snap_index: np.ndarray,
    snapshot: np.ndarray,
    every: int = 0,
    stored: np.ndarray | None = None,
    blowup: float = 1e12,
    ball: tuple | None = None,
    lam: float = 0.0,
) -> np.ndarray:
    """Whole ULA loop in place for the drift ``(x - mean) / var``.

    An infinite variance gives zero drift in that coordinate. With
    ``ball = (center, radius)`` and ``lam > 0`` the Moreau-Yosida penalty
    ``(x - proj(x)) / lam`` of that ball is added. Step ``i`` (1-based) uses
    ``gammas[i-1]`` and the counter ``(outer_k, i)``, so the result is
    bit-identical to repeated :func:`ula_update` calls with that drift.
    When ``every > 0`` every ``every``-th iterate is written to ``stored``. Returns, per chain, the step at which it diverged (0 if none);
    a diverged chain stops at its offending iterate.
    """
    if len(gammas) >= (1 << _INNER_BITS) or not 0 <= outer_k <= _MAX_OUTER:
        raise ValueError("counter out of range")
    if stored is None:
        stored = np.empty((0, 0, 0))
    if ball is None:
        center, radius, lam = np.zeros(x.shape[1]), 0.0, 0.0
    else:
        center, radius = np.ascontiguousarray(ball[0], dtype=float), float(ball[1])
        if not lam > 0:
            raise ValueError("lam must be positive when a ball penalty is given")
    bad = np.zeros(x.shape[0], dtype=np.int64)
    kernel = _affine_kernel_2d if x.shape[1] == 2 else _affine_kernel
    kernel(
        x, np.ascontiguousarray(mean, dtype=float), np.ascontiguousarray(var, dtype=float),
        np.ascontiguousarray(gammas, dtype=float), keys, outer_k, snap_index, snapshot,
        int(every), stored, float(blowup) ** 2, bad, center, radius, float(lam),
    )
    return bad


@dataclass
class RngState:
    """Position of one chain inside its random stream."""

    seed: int
    chain_id: int = 0
    outer_k: int = 0
    inner_n: int = 0

    @property
    def key(self) -> np.ndarray:
        return chain_keys(self.seed, [self.chain_id])

    def normal(self, dim: int) -> np.ndarray:
        """Advance to the next inner step and return its Gaussian vector."""
        self.inner_n += 1
        return normal_block(self.key, self.outer_k, self.inner_n, dim)[0]

    def start_outer(self, k: int) -> None:
        self.outer_k = k
        self.inner_n = 0
