"""ULA kernel and the double-loop drivers.

All drivers are built on :func:`simulate`, which advances a batch of
independent chains in lock-step. Every random number a chain consumes is
addressed by ``(seed, chain_id, outer_k, inner_n)``, so the result for a given
chain does not depend on which other chains share its batch.
"""
from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import rng as _rng
from .geometry import ConvexBody, MoreauYosidaPotential, project_ball
from .rng import RngState
from .schedule import DoubleLoopSchedule, StepSequence, total_iterations
from .targets import Potential

__all__ = [
    "SamplerError",
    "ChainState",
    "Snapshot",
    "RunRecord",
    "RunSpec",
    "BatchResult",
    "ula_step",
    "run_inner_loop",
    "run_dl_ula",
    "run_dl_myula",
    "run_ula_baseline",
    "rescale_samples",
    "simulate",
    "replicate_chains",
    "BLOWUP_NORM",
]

BLOWUP_NORM = 1e12

Array = np.ndarray
GradFn = Callable[[Array], Array]
NoiseFn = Callable[[int, int, tuple], Array]


class SamplerError(RuntimeError):
    """Non-finite or exploding iterate, with its location in the run."""

    def __init__(self, message: str, x: Array, k: int | None = None, n: int | None = None, chain: int | None = None):
        super().__init__(message)
        self.x = x
        self.k = k
        self.n = n
        self.chain = chain
        # outer iterations (or flat-run snapshots) finished before the failure
        self.completed = 0
        self.partial: Optional["BatchResult"] = None


@dataclass
class ChainState:
    x: Array
    outer_k: int = 0
    inner_n: int = 0
    rng: Optional[RngState] = None


@dataclass
class Snapshot:
    k: int
    pre_clip: Array
    post_clip: Array
    gamma: float
    n: int
    tau: Optional[float]
    lam: Optional[float]
    total_iters: int

    def to_json(self) -> dict:
        return {
            "type": "snapshot",
            "k": self.k,
            "pre_clip": [float(v) for v in self.pre_clip],
            "post_clip": [float(v) for v in self.post_clip],
            "gamma": float(self.gamma),
            "n": int(self.n),
            "tau": None if self.tau is None else float(self.tau),
            "lambda": None if self.lam is None else float(self.lam),
            "total_iters": int(self.total_iters),
        }

    @classmethod
    def from_json(cls, row: dict) -> "Snapshot":
        return cls(
            k=row["k"],
            pre_clip=np.array(row["pre_clip"], dtype=float),
            post_clip=np.array(row["post_clip"], dtype=float),
            gamma=row["gamma"],
            n=row["n"],
            tau=row["tau"],
            lam=row["lambda"],
            total_iters=row["total_iters"],
        )


@dataclass
class RunRecord:
    """Trace of one chain: one snapshot per outer iteration (or per thinning block)."""

    config_digest: str
    seed: int
    chain_id: int
    driver: str
    snapshots: list[Snapshot] = field(default_factory=list)
    timing: list[float] = field(default_factory=list)

    @property
    def totals(self) -> list[int]:
        return [s.total_iters for s in self.snapshots]

    def to_jsonl(self) -> str:
        head = {
            "type": "header",
            "config_digest": self.config_digest,
            "seed": int(self.seed),
            "chain_id": int(self.chain_id),
            "driver": self.driver,
        }
        lines = [json.dumps(head, sort_keys=True)]
        lines += [json.dumps(s.to_json(), sort_keys=True) for s in self.snapshots]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> list["RunRecord"]:
        records: list[RunRecord] = []
        for line in text.splitlines():
            if not line.strip():
                continue
            row = json.loads(line)
            if row["type"] == "header":
                records.append(cls(row["config_digest"], row["seed"], row["chain_id"], row["driver"]))
            else:
                records[-1].snapshots.append(Snapshot.from_json(row))
        return records


def ula_step(x, gamma: float, grad: GradFn, rng: Optional[RngState] = None, noise=None) -> Array:
    """``x - γ ∇f(x) + sqrt(2γ) g``.

    ``g`` comes from ``rng`` (which advances by one step) unless ``noise`` is
    given explicitly.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(grad(x), dtype=float)
    if not np.all(np.isfinite(g)):
        raise SamplerError("non-finite gradient", x)
    if noise is not None:
        return x - gamma * g + math.sqrt(2.0 * gamma) * np.asarray(noise, dtype=float)
    if rng is None:
        raise ValueError("either rng or noise must be supplied")
    rng.inner_n += 1
    out = np.empty((1, x.shape[-1]))
    dummy = np.zeros(1, dtype=np.int64)
    _rng.ula_update(x.reshape(1, -1), g.reshape(1, -1), gamma, rng.key, rng.outer_k, rng.inner_n, out, dummy, out, BLOWUP_NORM)
    return out[0]


def run_inner_loop(x0, gamma: float, n: int, grad: GradFn, rng: RngState, noise: Optional[NoiseFn] = None, index: Optional[int] = None):
    """``n`` ULA steps at fixed ``gamma``.

    Returns ``(snapshot, last)`` where ``snapshot`` is the post-step iterate at
    an index drawn uniformly from ``{1, ..., n}``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if index is None:
        index = int(_rng.index_draw(rng.key, rng.outer_k, n)[0])
    elif not 1 <= index <= n:
        raise ValueError("forced index must lie in 1..n")
    x = np.asarray(x0, dtype=float)
    snap = x
    for i in range(1, n + 1):
        if noise is None:
            x = ula_step(x, gamma, grad, rng)
        else:
            rng.inner_n += 1
            x = ula_step(x, gamma, grad, noise=noise(rng.outer_k, i, x.shape))
        if i == index:
            snap = x
    return snap, x


# ---------------------------------------------------------------------------
# batch engine


@dataclass(frozen=True)
class RunSpec:
    """Everything needed to simulate a chain, except its seed and index.

    ``driver`` is ``"dl-ula"``, ``"dl-myula"`` or ``"ula"``. Double-loop drivers
    use ``schedule`` and ``K``; the flat ULA baseline uses ``gammas``, ``N``
    and ``snapshot_every``.
    """

    driver: str
    target: Potential
    schedule: Optional[DoubleLoopSchedule] = None
    K: int = 1
    body: Optional[ConvexBody] = None
    gammas: Optional[Callable[[int], float]] = None
    N: int = 1
    snapshot_every: int = 1
    x0: Optional[Sequence[float]] = None
    digest: Optional[str] = None

    def __post_init__(self):
        if self.driver not in ("dl-ula", "dl-myula", "ula"):
            raise ValueError(f"unknown driver {self.driver!r}")
        if self.driver == "ula":
            if self.gammas is None or self.N < 1:
                raise ValueError("ULA baseline needs gammas and N >= 1")
            if not 1 <= self.snapshot_every <= self.N:
                raise ValueError("snapshot_every must lie in 1..N")
        else:
            if self.schedule is None or self.K < 1:
                raise ValueError("double-loop drivers need a schedule and K >= 1")
            if self.driver == "dl-ula" and self.schedule.penalty is not None:
                raise ValueError("DL-ULA schedule must not carry a penalty")
            if self.driver == "dl-myula":
                if self.schedule.penalty is None or self.body is None:
                    raise ValueError("DL-MYULA needs a penalty schedule and a body")
        if self.body is not None and self.body.dim != self.target.dim:
            raise ValueError("target and body dimensions differ")

    @property
    def dim(self) -> int:
        return self.target.dim

    def start(self) -> Array:
        x0 = np.zeros(self.dim) if self.x0 is None else np.asarray(self.x0, dtype=float)
        if x0.shape != (self.dim,):
            raise ValueError(f"x0 must have shape ({self.dim},)")
        return x0

    def stages(self) -> list[tuple[float, int, Optional[float], Optional[float]]]:
        if self.driver == "ula":
            return []
        return [self.schedule.stage(k) for k in range(1, self.K + 1)]

    def description(self) -> dict:
        desc = {
            "driver": self.driver,
            "target": self.target.name,
            "dim": self.dim,
            "x0": self.start().tolist(),
        }
        if self.driver == "ula":
            desc.update(N=self.N, snapshot_every=self.snapshot_every,
                        gammas=[self.gammas(j * self.snapshot_every) for j in range(1, self.N // self.snapshot_every + 1)])
        else:
            desc.update(K=self.K, stages=[list(s) for s in self.stages()])
        if self.body is not None:
            desc["body"] = {"kind": self.body.kind, **{k: v for k, v in self.body.params.items() if k != "bbox"}}
        return desc

    def config_digest(self) -> str:
        if self.digest is not None:
            return self.digest
        text = json.dumps(self.description(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass
class BatchResult:
    """Snapshots of a batch of chains. ``pre``/``post`` have shape ``(K, chains, dim)``."""

    spec: RunSpec
    seed: int
    chain_ids: Array
    pre: Array
    post: Array
    gammas: list[float]
    counts: list[int]
    radii: list[Optional[float]]
    penalties: list[Optional[float]]
    totals: list[int]
    timing: list[float]

    def record(self, i: int) -> RunRecord:
        snaps = [
            Snapshot(k + 1, self.pre[k, i].copy(), self.post[k, i].copy(), self.gammas[k], self.counts[k],
                     self.radii[k], self.penalties[k], self.totals[k])
            for k in range(self.pre.shape[0])
        ]
        return RunRecord(self.spec.config_digest(), self.seed, int(self.chain_ids[i]), self.spec.driver, snaps, list(self.timing))

    def records(self) -> list[RunRecord]:
        return [self.record(i) for i in range(len(self.chain_ids))]


def _stage_gradient(spec: RunSpec, lam: Optional[float]) -> GradFn:
    if spec.driver == "dl-myula":
        return MoreauYosidaPotential(spec.target, spec.body, lam).gradient
    return spec.target.gradient


def _advance(x, grad, gamma, keys, k, i, out, idx, snap, chain_ids, noise):
    drift = np.asarray(grad(x), dtype=float)
    if noise is None:
        bad = _rng.ula_update(x, drift, gamma, keys, k, i, out, idx, snap, BLOWUP_NORM)
    else:
        out[...] = x - gamma * drift + math.sqrt(2.0 * gamma) * noise(k, i, x.shape)
        np.copyto(snap, out, where=(idx == i)[:, None])
        sq = np.einsum("ij,ij->i", out, out)
        flagged = np.flatnonzero(~(sq <= BLOWUP_NORM**2))
        bad = int(flagged[0]) if flagged.size else -1
    if bad >= 0:
        raise SamplerError(
            f"iterate diverged at outer {k}, inner {i}, chain {int(chain_ids[bad])}",
            out[bad].copy(), k, i, int(chain_ids[bad]),
        )


def _fused(spec: RunSpec, noise) -> bool:
    if noise is not None or spec.target.affine is None:
        return False
    return spec.driver != "dl-myula" or spec.body.kind == "ball"


def _ball_args(spec: RunSpec, lam) -> dict:
    if spec.driver != "dl-myula":
        return {}
    return {"ball": (spec.body.params["center"], spec.body.params["radius"]), "lam": lam}


def _raise_first(bad: Array, x: Array, k: int, chain_ids: Array) -> None:
    hit = np.flatnonzero(bad > 0)
    if hit.size == 0:
        return
    c = hit[np.argmin(bad[hit])]
    i = int(bad[c])
    raise SamplerError(f"iterate diverged at outer {k}, inner {i}, chain {int(chain_ids[c])}", x[c].copy(), k, i,
                       int(chain_ids[c]))


def simulate(
    spec: RunSpec,
    seed: int,
    chain_ids: Sequence[int],
    noise: Optional[NoiseFn] = None,
    index: Optional[Callable[[int, int], Array]] = None,
    fused: bool = True,
) -> BatchResult:
    """Run the chains ``chain_ids`` of ``spec`` side by side.

    ``noise(k, n, shape)`` and ``index(k, n_k)`` replace the counter-based
    draws; they exist for deterministic tests. Gaussian targets run their
    inner loops in compiled code unless ``fused`` is false; both paths give
    bit-identical results.
    """
    fused = fused and _fused(spec, noise)
    ids = np.asarray(chain_ids, dtype=np.int64)
    keys = _rng.chain_keys(seed, ids)
    m, d = ids.shape[0], spec.dim
    x0 = spec.start()
    if spec.driver == "dl-myula" and np.linalg.norm(x0) > spec.body.outer_radius * (1 + 1e-12):
        raise ValueError("x0 must lie in B(0, D) for DL-MYULA")
    x = np.tile(x0, (m, 1))
    out = np.empty_like(x)

    if spec.driver == "ula":
        try:
            return _simulate_flat(spec, seed, ids, keys, x, out, noise, fused)
        except SamplerError as err:
            err.completed = (err.n - 1) // spec.snapshot_every
            raise

    try:
        return _simulate_stages(spec, seed, ids, keys, x, out, noise, index, fused)
    except SamplerError as err:
        err.completed = (err.k or 1) - 1
        raise


def _simulate_stages(spec, seed, ids, keys, x, out, noise, index, fused):
    d = spec.dim
    pres, posts, timing = [], [], []
    stages = spec.stages()
    for k, (gamma, n, tau, lam) in enumerate(stages, start=1):
        t0 = time.perf_counter()
        grad = _stage_gradient(spec, lam)
        idx = index(k, n) if index is not None else _rng.index_draw(keys, k, n)
        idx = np.asarray(idx, dtype=np.int64)
        snap = np.empty_like(x)
        if fused:
            bad = _rng.ula_affine_run(x, *spec.target.affine, np.full(n, gamma), keys, k, idx, snap,
                                     blowup=BLOWUP_NORM, **_ball_args(spec, lam))
            _raise_first(bad, x, k, ids)
        else:
            for i in range(1, n + 1):
                _advance(x, grad, gamma, keys, k, i, out, idx, snap, ids, noise)
                x, out = out, x
        pres.append(snap.copy())
        post = project_ball(np.zeros(d), tau, snap)
        posts.append(post)
        x = post.copy()
        out = np.empty_like(x)
        timing.append(time.perf_counter() - t0)

    totals = list(np.cumsum([s[1] for s in stages]).astype(int))
    assert totals[-1] == total_iterations(spec.schedule, spec.K)
    return BatchResult(
        spec, seed, ids, np.stack(pres), np.stack(posts),
        [s[0] for s in stages], [s[1] for s in stages], [s[2] for s in stages], [s[3] for s in stages],
        [int(t) for t in totals], timing,
    )


def _simulate_flat(spec, seed, ids, keys, x, out, noise, fused):
    every = spec.snapshot_every
    n_snap = spec.N // every
    stored = np.empty((n_snap,) + x.shape)
    never = np.zeros(x.shape[0], dtype=np.int64)
    scratch = np.empty_like(x)
    t0 = time.perf_counter()
    if fused:
        steps = np.array([spec.gammas(i) for i in range(1, spec.N + 1)], dtype=float)
        bad = _rng.ula_affine_run(x, *spec.target.affine, steps, keys, 0, never, scratch, every, stored, BLOWUP_NORM)
        _raise_first(bad, x, 0, ids)
        gammas = [float(steps[(j + 1) * every - 1]) for j in range(n_snap)]
        timing = [(time.perf_counter() - t0) / n_snap] * n_snap
    else:
        gammas, timing = [], []
        for i in range(1, spec.N + 1):
            gamma = spec.gammas(i)
            _advance(x, spec.target.gradient, gamma, keys, 0, i, out, never, scratch, ids, noise)
            x, out = out, x
            if i % every == 0:
                stored[i // every - 1] = x
                gammas.append(gamma)
                timing.append(time.perf_counter() - t0)
                t0 = time.perf_counter()
    totals = [(j + 1) * every for j in range(n_snap)]
    return BatchResult(
        spec, seed, ids, stored, stored, gammas, [every] * n_snap, [None] * n_snap, [None] * n_snap, totals, timing,
    )


# ---------------------------------------------------------------------------
# single-chain entry points


def run_dl_ula(target: Potential, schedule: DoubleLoopSchedule, K: int, seed: int, x0=None, chain_id: int = 0,
               noise: Optional[NoiseFn] = None, index=None) -> RunRecord:
    spec = RunSpec("dl-ula", target, schedule=schedule, K=K, x0=x0)
    return simulate(spec, seed, [chain_id], noise, index).record(0)


def run_dl_myula(target: Potential, body: ConvexBody, schedule: DoubleLoopSchedule, K: int, seed: int, x0=None,
                 chain_id: int = 0, noise: Optional[NoiseFn] = None, index=None) -> RunRecord:
    spec = RunSpec("dl-myula", target, schedule=schedule, K=K, body=body, x0=x0)
    return simulate(spec, seed, [chain_id], noise, index).record(0)


def run_ula_baseline(target: Potential, gammas: Callable[[int], float] | StepSequence, N: int, seed: int,
                     snapshot_every: int = 1, x0=None, chain_id: int = 0, noise: Optional[NoiseFn] = None) -> RunRecord:
    """Flat ULA run storing every ``snapshot_every``-th iterate.

    The stored iterates, weighted uniformly, represent the averaged law of the run.
    """
    spec = RunSpec("ula", target, gammas=gammas, N=N, snapshot_every=snapshot_every, x0=x0)
    return simulate(spec, seed, [chain_id], noise).record(0)


def rescale_samples(points, M: float) -> Array:
    """Dilate samples by ``M``, undoing a contraction of the target by ``1/M``."""
    if not M > 0:
        raise ValueError("M must be positive")
    return np.asarray(points, dtype=float) * M


def replicate_chains(spec: RunSpec, n_chains: int, base_seed: int, threads: int = 1, block_size: int = 4096,
                     as_records: bool = True):
    """Simulate ``n_chains`` independent chains of ``spec``.

    Chains are split into blocks that may run on ``threads`` workers; output
    is ordered by chain index and is identical for any ``threads`` or
    ``block_size``. Returns a list of :class:`RunRecord`, or the merged
    :class:`BatchResult` when ``as_records`` is false.
    """
    if n_chains < 1:
        raise ValueError("n_chains must be at least 1")
    blocks = [np.arange(s, min(s + block_size, n_chains)) for s in range(0, n_chains, block_size)]
    try:
        merged = _run_blocks(spec, base_seed, blocks, threads)
    except SamplerError as err:
        err.partial, err.completed = _common_prefix(spec, base_seed, blocks, threads, err.completed)
        raise err
    return merged.records() if as_records else merged


def _run_blocks(spec, seed, blocks, threads):
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda ids: simulate(spec, seed, ids), blocks))
    else:
        parts = [simulate(spec, seed, ids) for ids in blocks]
    return _merge(parts)


def _common_prefix(spec, seed, blocks, threads, done):
    # the longest prefix of outer iterations that every chain completes
    while done > 0:
        try:
            return _run_blocks(_truncated(spec, done), seed, blocks, threads), done
        except SamplerError as err:
            done = min(done - 1, err.completed)
    return None, 0


def _truncated(spec: RunSpec, done: int) -> RunSpec:
    if spec.driver == "ula":
        return replace(spec, N=done * spec.snapshot_every)
    return replace(spec, K=done)


def _merge(parts: list[BatchResult]) -> BatchResult:
    first = parts[0]
    if len(parts) == 1:
        return first
    timing = [sum(p.timing[k] for p in parts) for k in range(len(first.timing))]
    return BatchResult(
        first.spec, first.seed,
        np.concatenate([p.chain_ids for p in parts]),
        np.concatenate([p.pre for p in parts], axis=1),
        np.concatenate([p.post for p in parts], axis=1),
        first.gammas, first.counts, first.radii, first.penalties, first.totals, timing,
    )
