"""Replicated runs, per-iteration metric series, persistence and reporting."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import rng as _rng
from .bounds import BoundReport, check_my_tail, check_tail_mc, fit_decay_rate, format_table
from .config import ConfigError, ExperimentConfig, serialize_config
from .geometry import ConvexBody, make_body
from .metrics import EmpiricalMeasure, HistogramSpec, sliced_w2, tv_histogram, w2_1d
from .sampler import BatchResult, RunRecord, RunSpec, SamplerError, replicate_chains
from .schedule import DoubleLoopSchedule, ScheduleScale, StepSequence, dl_myula_schedule, dl_ula_schedule
from .targets import GaussianOracle, make_target

__all__ = [
    "MetricSeries",
    "ExperimentResult",
    "build_run_spec",
    "exact_reference_sampler",
    "uniform_ball_radial_masses",
    "run_experiment",
    "write_outputs",
    "emit_plot_data",
    "report",
    "load_bound_reports",
]

log = logging.getLogger(__name__)

BASE_COLUMNS = (
    "outer_k", "total_iters", "gamma_k", "lambda_k", "tv", "tv_radial", "w2_sliced", "w2_1d",
    "mean_norm_sq", "frac_outside_body",
)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def _parse_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        return float(text)


@dataclass
class MetricSeries:
    """One row per outer iteration (or per stored snapshot of a flat run)."""

    columns: list[str]
    rows: list[dict]
    digest: str = ""
    wallclock_ms: list[float] = field(default_factory=list)

    def column(self, name: str) -> list:
        return [r.get(name) for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(r.get(c)) for c in self.columns])
        return buf.getvalue()

    def timing_csv(self) -> str:
        lines = ["outer_k,wallclock_ms"]
        lines += [f"{r['outer_k']},{t:.3f}" for r, t in zip(self.rows, self.wallclock_ms)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, digest: str = "") -> "MetricSeries":
        reader = csv.reader(io.StringIO(text))
        columns = next(reader)
        rows = [{c: _parse_cell(v) for c, v in zip(columns, line)} for line in reader if line]
        return cls(columns, rows, digest)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    spec: RunSpec
    batch: BatchResult
    records: list[RunRecord]
    series: MetricSeries
    reports: list[BoundReport]

    def samples(self, k: int) -> np.ndarray:
        """Scaled snapshot cloud measured at outer iteration ``k`` (1-based)."""
        side = self.batch.pre if self.config["snapshot"] == "pre-clip" else self.batch.post
        return side[k - 1] * self.config["rescale"]


# ---------------------------------------------------------------------------
# building blocks from a config


def _schedule(cfg: ExperimentConfig, target, body: Optional[ConvexBody]) -> DoubleLoopSchedule:
    s = cfg["schedule"]
    d = cfg.dim
    if s["kind"] == "explicit":
        sched = DoubleLoopSchedule.from_sequences(s["gammas"], s["counts"], s["radii"], s.get("penalties"))
    else:
        sc = s["scale"]
        scale = ScheduleScale(sc["n_mult"], sc["gamma_mult"], sc["n_cap"])
        if s["kind"] == "dl-ula":
            if target.tail is None:
                raise ConfigError(["dl-ula needs a target with light-tail constants"])
            sched = dl_ula_schedule(target.lipschitz, d, target.tail, scale)
        else:
            L = s.get("lipschitz", target.lipschitz)
            if not body.inner_radius > 0:
                raise ConfigError([f"dl-myula needs a body with nonempty interior; {body.kind} has r = 0"])
            sched = dl_myula_schedule(L, d, body.inner_radius, body.outer_radius, scale)
    if s["gamma_factor"] != 1.0 or s["radius_factor"] != 1.0:
        sched = sched.with_transform(s["gamma_factor"], s["radius_factor"])
    return sched


def build_run_spec(cfg: ExperimentConfig) -> RunSpec:
    target = make_target(cfg["target"])
    body = make_body(cfg["body"], cfg.dim) if cfg["body"] is not None else None
    s = cfg["schedule"]
    if cfg.driver == "ula":
        return RunSpec("ula", target, gammas=StepSequence(s["gamma0"], s.get("alpha", 0.0)), N=s["N"],
                       snapshot_every=s["snapshot_every"], x0=cfg["x0"], digest=cfg.digest)
    return RunSpec(cfg.driver, target, schedule=_schedule(cfg, target, body), K=cfg["K"], body=body,
                   x0=cfg["x0"], digest=cfg.digest)


def exact_reference_sampler(kind: str, n: int, seed: int, *, dim: int = 1, oracle: Optional[GaussianOracle] = None,
                            body: Optional[ConvexBody] = None, min_acceptance: float = 1e-4) -> EmpiricalMeasure:
    """``n`` exact i.i.d. draws from a Gaussian (optionally restricted to
    ``body``) or from the uniform law on ``body``.

    Draws use their own counter stream, so they are independent of every
    sampler chain run with the same seed. Balls, boxes and simplices are
    sampled directly; anything else by rejection.

    Raises:
        ValueError: if rejection acceptance falls below ``min_acceptance``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    keys = _rng.chain_keys(seed, np.arange(n))
    S = _rng.STREAM_REFERENCE
    if kind == "gaussian":
        g = oracle if oracle is not None else GaussianOracle.standard(dim)
        draw = lambda ks, lane: g.mean + np.sqrt(g.variances) * _rng.normal_block(ks, S, lane, g.dim)  # noqa: E731
        if body is None:
            return EmpiricalMeasure(draw(keys, 1))
        return EmpiricalMeasure(_rejection(draw, body, keys, min_acceptance))
    if kind != "uniform-body":
        raise ValueError(f"unknown reference kind {kind!r}")
    if body is None:
        raise ValueError("uniform-body references need a body")
    d = body.dim
    if body.kind == "ball":
        c = np.asarray(body.params["center"])
        u = _rng.normal_block(keys, S, 1, d)
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = body.params["radius"] * _rng.uniform_block(keys, S, 2, 1) ** (1.0 / d)
        return EmpiricalMeasure(c + r * u)
    if body.kind == "box":
        lo, hi = (np.asarray(v) for v in body.params["bbox"])
        return EmpiricalMeasure(lo + (hi - lo) * _rng.uniform_block(keys, S, 1, d))
    if body.kind == "simplex":
        e = -np.log(_rng.uniform_block(keys, S, 1, d))
        return EmpiricalMeasure(e / e.sum(axis=1, keepdims=True))
    lo, hi = (np.asarray(v) for v in body.params["bbox"])
    draw = lambda ks, lane: lo + (hi - lo) * _rng.uniform_block(ks, S, lane, d)  # noqa: E731
    return EmpiricalMeasure(_rejection(draw, body, keys, min_acceptance))


def _rejection(draw, body: ConvexBody, keys, min_acceptance: float) -> np.ndarray:
    out = np.empty((keys.shape[0], body.dim))
    pending = np.arange(keys.shape[0])
    lane = 1
    while pending.size:
        cand = draw(keys[pending], lane)
        ok = np.asarray(body.contains(cand), dtype=bool)
        if lane == 1 and ok.mean() < min_acceptance:
            raise ValueError(
                f"rejection acceptance {ok.mean():.2g} below {min_acceptance:g}; supply a tighter bounding box"
            )
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
        lane += 1
    return out


def uniform_ball_radial_masses(radius: float, dim: int, spec: HistogramSpec) -> np.ndarray:
    """Exact cell masses of ``|X|`` for ``X`` uniform on a centred ball."""
    edges = np.clip(spec.edges(0), 0.0, None)
    cdf = np.minimum(edges / radius, 1.0) ** dim
    return np.append(np.diff(cdf), 1.0 - cdf[-1] + cdf[0])


# ---------------------------------------------------------------------------
# metric series


class _References:
    """Lazily built comparison laws for one experiment."""

    def __init__(self, cfg: ExperimentConfig, spec: RunSpec):
        self.cfg = cfg
        self.body = spec.body
        t = cfg["target"]
        self.oracle = GaussianOracle(t["mean"], t["variances"]) if t["kind"] == "gaussian" else None
        self._cloud: Optional[EmpiricalMeasure] = None

    @property
    def exact_gaussian(self) -> Optional[GaussianOracle]:
        return self.oracle if self.body is None else None

    def cloud(self) -> EmpiricalMeasure:
        if self._cloud is None:
            n, seed = self.cfg["reference_size"], self.cfg["seed"]
            if self.oracle is not None:
                self._cloud = exact_reference_sampler("gaussian", n, seed, oracle=self.oracle, body=self.body)
            else:
                self._cloud = exact_reference_sampler("uniform-body", n, seed, body=self.body)
        return self._cloud

    def radial(self, hspec: HistogramSpec):
        b = self.body
        if (self.oracle is None and b is not None and b.kind == "ball"
                and not np.any(b.params["center"])):
            return uniform_ball_radial_masses(b.params["radius"], b.dim, hspec)
        return EmpiricalMeasure(self.cloud().norms())


def _clip_extent(spec: RunSpec, cfg: ExperimentConfig, K: int) -> Optional[float]:
    if spec.driver == "ula":
        return None
    return spec.schedule.clip_radius(K)


def _histograms(cfg: ExperimentConfig, spec: RunSpec, K: int):
    h = cfg["histogram"]
    bins, d = h["bins"], cfg.dim
    scale = cfg["rescale"]
    tau = _clip_extent(spec, cfg, K)
    if "lo" in h:
        grid = HistogramSpec(h["lo"], h["hi"], bins)
    elif "half_width" in h:
        grid = HistogramSpec.cube(h["half_width"], d, bins)
    elif tau is not None:
        grid = HistogramSpec.cube(tau * scale, d, bins)
    else:
        grid = None
    rmax = h.get("radial_max", h.get("half_width", None if tau is None else tau * scale))
    radial = HistogramSpec([0.0], [rmax], bins) if rmax is not None else None
    return grid, radial


def _series(cfg: ExperimentConfig, spec: RunSpec, batch: BatchResult) -> MetricSeries:
    metrics = set(cfg["metrics"])
    d = cfg.dim
    K = batch.pre.shape[0]
    grid, radial = _histograms(cfg, spec, spec.K if spec.driver != "ula" else K)
    if "tv" in metrics and grid is None:
        raise ConfigError(["histogram bounds needed for tv"])
    if "tv-radial" in metrics and radial is None:
        raise ConfigError(["histogram.radial_max needed for tv-radial"])
    refs = _References(cfg, spec)
    side = batch.pre if cfg["snapshot"] == "pre-clip" else batch.post
    columns = list(BASE_COLUMNS)
    if "moments" in metrics:
        for j in range(d):
            columns += [f"mean_{j}", f"se_mean_{j}", f"m2_{j}", f"se_m2_{j}"]
    columns.append("se_frac_outside")
    rows = []
    for k in range(K):
        raw = side[k]
        pts = raw * cfg["rescale"]
        meas = EmpiricalMeasure(pts)
        n = pts.shape[0]
        row = {
            "outer_k": k + 1,
            "total_iters": batch.totals[k],
            "gamma_k": batch.gammas[k],
            "lambda_k": batch.penalties[k],
            "mean_norm_sq": meas.mean_norm_sq(),
        }
        if spec.body is not None:
            f = float(np.mean(~np.asarray(spec.body.contains(raw), dtype=bool)))
            row["frac_outside_body"] = f
            row["se_frac_outside"] = math.sqrt(f * (1 - f) / n)
        else:
            row["frac_outside_body"] = 0.0
            row["se_frac_outside"] = 0.0
        if "tv" in metrics:
            ref = refs.exact_gaussian if refs.exact_gaussian is not None else refs.cloud()
            row["tv"] = tv_histogram(meas, ref, grid)
        if "tv-radial" in metrics:
            row["tv_radial"] = tv_histogram(EmpiricalMeasure(meas.norms()), refs.radial(radial), radial)
        if "w2-sliced" in metrics:
            row["w2_sliced"] = sliced_w2(meas, refs.cloud(), cfg["n_proj"], cfg["seed"])
        if "w2-1d" in metrics:
            row["w2_1d"] = w2_1d(meas, refs.cloud())
        if "moments" in metrics:
            sd = max(n - 1, 1)
            for j in range(d):
                x = pts[:, j]
                row[f"mean_{j}"] = float(x.mean())
                row[f"se_mean_{j}"] = float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
                x2 = x * x
                row[f"m2_{j}"] = float(x2.mean())
                row[f"se_m2_{j}"] = float(np.sqrt(np.sum((x2 - x2.mean()) ** 2) / sd) / math.sqrt(n)) if n > 1 else math.nan
        rows.append(row)
    ms = [1000.0 * t for t in batch.timing]
    return MetricSeries(columns, rows, cfg.digest, ms)


# ---------------------------------------------------------------------------
# configured checks


def _decay_report(name: str, values, max_slope: float) -> BoundReport:
    pts = [(k, v) for k, v in enumerate(values, start=1)]
    try:
        slope = fit_decay_rate(pts)
    except ValueError as exc:
        return BoundReport(name, math.nan, max_slope, False, math.nan, {"note": str(exc), "tolerance": 0.0})
    return BoundReport.compare(name, slope, max_slope, 0.0, values=list(values))


def _run_checks(cfg: ExperimentConfig, spec: RunSpec, series: MetricSeries, final: EmpiricalMeasure) -> list[BoundReport]:
    out: list[BoundReport] = []
    for c in cfg["checks"]:
        kind = c["kind"]
        if kind == "tv-decay":
            tv = series.column("tv")
            out.append(_decay_report("tv-decay", tv, c["max_slope"]))
            if c.get("ratio") is not None:
                out.append(BoundReport.compare("tv-ratio", tv[-1] * c["ratio"], tv[0], 0.0, ratio=c["ratio"]))
        elif kind == "radial-decay":
            out.append(_decay_report("radial-tv-decay", series.column("tv_radial"), c["max_slope"]))
        elif kind == "frac-outside":
            f = np.array(series.column("frac_outside_body"), dtype=float)
            se = np.array(series.column("se_frac_outside"), dtype=float)
            excess = np.diff(f) - 2.0 * np.sqrt(se[:-1] ** 2 + se[1:] ** 2)
            worst = float(excess.max()) if excess.size else -math.inf
            out.append(BoundReport.compare("frac-outside-monotone", worst, 0.0, 0.0, values=f.tolist()))
            out.append(BoundReport.compare("frac-outside-final", float(f[-1]), c["max_final"], 0.0))
        elif kind == "tail-mc":
            out.extend(check_tail_mc(final, c["C"], c["R"]))
        elif kind == "my-tail":
            out.append(check_my_tail(final, spec.body.outer_radius * cfg["rescale"], c["R"]))
    return out


# ---------------------------------------------------------------------------
# orchestration


def run_experiment(cfg: ExperimentConfig, threads: int = 1, out_dir: Optional[str | os.PathLike] = None) -> ExperimentResult:
    """Run ``n_chains`` replicated chains and measure every outer iteration.

    The result is a pure function of the config and its seed. When
    ``out_dir`` (or the config's ``output``) is set, all files are written
    there. If a chain diverges, the series for the iterations every chain
    completed is still written before the error propagates.
    """
    spec = build_run_spec(cfg)
    out_dir = out_dir if out_dir is not None else cfg.get("output")
    try:
        batch = replicate_chains(spec, cfg["n_chains"], cfg["seed"], threads=threads,
                                 block_size=cfg["block_size"], as_records=False)
    except SamplerError as err:
        if err.partial is not None and out_dir is not None:
            series = _series(cfg, spec, err.partial)
            records = [err.partial.record(i) for i in range(min(cfg["max_records"], cfg["n_chains"]))]
            write_outputs(out_dir, cfg, records, series, [])
            log.error("sampler failed after %d complete iterations; partial series written to %s",
                      err.completed, out_dir)
        raise
    series = _series(cfg, spec, batch)
    records = [batch.record(i) for i in range(min(cfg["max_records"], cfg["n_chains"]))]
    side = batch.pre if cfg["snapshot"] == "pre-clip" else batch.post
    final = EmpiricalMeasure(side[-1] * cfg["rescale"])
    reports = _run_checks(cfg, spec, series, final)
    result = ExperimentResult(cfg, spec, batch, records, series, reports)
    if out_dir is not None:
        write_outputs(out_dir, cfg, records, series, reports)
    return result


def write_outputs(out_dir, cfg: ExperimentConfig, records: Sequence[RunRecord], series: MetricSeries,
                  reports: Sequence[BoundReport]) -> None:
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.json").write_text(serialize_config(cfg))
    (path / "records.jsonl").write_text("".join(r.to_jsonl() for r in records))
    (path / "series.csv").write_text(series.to_csv())
    (path / "timing.csv").write_text(series.timing_csv())
    (path / "bounds.jsonl").write_text("".join(r.to_json() + "\n" for r in reports))
    emit_plot_data(series, path / "plot")


def emit_plot_data(series: MetricSeries, path) -> tuple[Path, Path]:
    """Write ``<path>_tv.dat`` (k, ln tv) and ``<path>_w2.dat`` (ln total_iters, ln w2).

    Rows whose value is missing or not positive become ``#`` comment lines.
    """
    if not series.rows:
        raise ValueError("empty series")
    base = Path(path)
    tv_path = base.with_name(base.name + "_tv.dat")
    w2_path = base.with_name(base.name + "_w2.dat")
    w2_col = "w2_sliced" if any(r.get("w2_sliced") is not None for r in series.rows) else "w2_1d"

    def write(target: Path, xlabel: str, ylabel: str, pairs):
        lines = [f"# config_digest {series.digest}", f"# {xlabel} {ylabel}"]
        for k, x, y in pairs:
            if y is None or not y > 0:
                lines.append(f"# skipped outer_k={k}: {ylabel[3:]}={y}")
            else:
                lines.append(f"{_fmt(x)} {_fmt(math.log(y))}")
        target.write_text("\n".join(lines) + "\n")

    write(tv_path, "k", "ln_tv", [(r["outer_k"], r["outer_k"], r.get("tv")) for r in series.rows])
    write(w2_path, "ln_total_iters", "ln_" + w2_col,
          [(r["outer_k"], math.log(r["total_iters"]), r.get(w2_col)) for r in series.rows])
    return tv_path, w2_path


def load_bound_reports(text: str) -> list[BoundReport]:
    out = []
    for line in text.splitlines():
        if line.strip():
            row = json.loads(line)
            out.append(BoundReport(row["name"], row["lhs"], row["rhs"], row["holds"], row["slack"], row["context"]))
    return out


def report(records: Sequence[RunRecord], series: Optional[MetricSeries], bound_reports: Sequence[BoundReport]) -> tuple[str, int]:
    """Text summary and exit code (0 iff every bound check holds)."""
    lines = []
    if series is not None and series.rows:
        lines.append(f"config digest: {series.digest or '-'}   chains recorded: {len(records)}")
        cols = ("outer_k", "total_iters", "gamma_k", "lambda_k", "tv", "tv_radial", "w2_sliced", "w2_1d",
                "mean_norm_sq", "frac_outside_body")
        lines.append(" ".join(f"{c:>14}" for c in cols))
        for r in series.rows:
            cells = []
            for c in cols:
                v = r.get(c)
                cells.append(f"{'-':>14}" if v is None else f"{v:>14.6g}")
            lines.append(" ".join(cells))
        for col in ("tv", "tv_radial"):
            vals = series.column(col)
            if len(vals) >= 3 and all(v is not None and v > 0 for v in vals):
                lines.append(f"fitted decay slope of ln {col} vs k: {fit_decay_rate(list(enumerate(vals, 1))):.4f}")
    if not bound_reports:
        lines.append("no checks requested")
        return "\n".join(lines) + "\n", 0
    lines.append(format_table(bound_reports))
    failed = [r for r in bound_reports if not r.holds]
    lines.append(f"checks: {len(bound_reports) - len(failed)} passed, {len(failed)} failed")
    for r in failed:
        lines.append(f"FAILED {r.name}: lhs={r.lhs:.6g} rhs={r.rhs:.6g} context={json.dumps(r.context, default=float)}")
    return "\n".join(lines) + "\n", 0 if not failed else 1
