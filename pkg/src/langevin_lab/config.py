"""Experiment configuration: strict parsing, defaults and a canonical digest.

A config is a JSON object. Unknown keys are errors, and every problem found
is reported at once.

Example::

    {"target": {"kind": "gaussian", "mean": [0, 0], "variances": [1, 1]},
     "schedule": {"kind": "dl-ula", "scale": {"n_mult": 1e-4, "gamma_mult": 1.478, "n_cap": 20000}},
     "K": 5, "n_chains": 100000, "seed": 11, "metrics": ["tv", "moments"]}
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Any

from .geometry import BODY_KINDS
from .targets import TARGET_KINDS

__all__ = ["ConfigError", "ExperimentConfig", "parse_config", "serialize_config", "METRIC_KINDS", "CHECK_KINDS"]

METRIC_KINDS = ("tv", "tv-radial", "w2-sliced", "w2-1d", "moments")
SCHEDULE_KINDS = ("dl-ula", "dl-myula", "polynomial", "constant", "explicit")
FLAT_KINDS = ("polynomial", "constant")
CHECK_KINDS = ("tv-decay", "radial-decay", "frac-outside", "tail-mc", "my-tail")
SNAPSHOT_SIDES = ("post-clip", "pre-clip")

_TOP = {
    "target": None, "body": None, "schedule": None, "K": None, "n_chains": None, "seed": None,
    "metrics": ["tv", "moments"], "histogram": None, "n_proj": 128, "reference_size": 100_000,
    "snapshot": "post-clip", "x0": None, "rescale": 1.0, "checks": [], "max_records": 100,
    "block_size": 4096, "output": None,
}
_REQUIRED = ("target", "schedule", "n_chains", "seed")
_TARGET_KEYS = {
    "gaussian": {"kind", "mean", "variances"},
    "uniform": {"kind", "dim"},
    "pseudo-huber": {"kind", "dim", "scale"},
}
_BODY_KEYS = {
    "ball": {"kind", "radius", "center", "dim", "delta1"},
    "box": {"kind", "lo", "hi", "delta1"},
    "simplex": {"kind", "dim"},
    "polytope": {"kind", "halfspaces", "delta1"},
}
_SCHEDULE_KEYS = {
    "dl-ula": {"kind", "scale", "gamma_factor", "radius_factor"},
    "dl-myula": {"kind", "scale", "gamma_factor", "radius_factor", "lipschitz"},
    "polynomial": {"kind", "gamma0", "alpha", "N", "snapshot_every"},
    "constant": {"kind", "gamma0", "N", "snapshot_every"},
    "explicit": {"kind", "gammas", "counts", "radii", "penalties", "gamma_factor", "radius_factor"},
}
_SCALE_KEYS = {"n_mult", "gamma_mult", "n_cap"}
_HIST_KEYS = {"bins", "lo", "hi", "half_width", "radial_max"}
_CHECK_KEYS = {
    "tv-decay": {"kind", "max_slope", "ratio"},
    "radial-decay": {"kind", "max_slope"},
    "frac-outside": {"kind", "max_final"},
    "tail-mc": {"kind", "C", "R"},
    "my-tail": {"kind", "R"},
}
# keys that never influence results
_NOT_DIGESTED = ("seed", "output")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("invalid config:\n  " + "\n  ".join(problems))
        self.problems = problems


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config with defaults filled in; ``data`` is plain JSON."""

    data: dict

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    def get(self, key: str, default=None):
        value = self.data.get(key)
        return default if value is None else value

    @property
    def digest(self) -> str:
        body = {k: v for k, v in self.data.items() if k not in _NOT_DIGESTED}
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @property
    def driver(self) -> str:
        kind = self.data["schedule"]["kind"]
        if kind == "explicit":
            return "dl-myula" if self.data["schedule"].get("penalties") is not None else "dl-ula"
        return "ula" if kind in FLAT_KINDS else kind

    @property
    def dim(self) -> int:
        t = self.data["target"]
        return len(t["mean"]) if t["kind"] == "gaussian" else int(t["dim"])

    def with_overrides(self, **changes) -> "ExperimentConfig":
        data = copy.deepcopy(self.data)
        data.update(changes)
        return parse_config(json.dumps(data))


def _unknown(where: str, given: dict, allowed: set, problems: list[str]) -> None:
    for key in sorted(set(given) - allowed):
        problems.append(f"unknown key {key!r} in {where}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_target(t, problems) -> int | None:
    if not isinstance(t, dict) or t.get("kind") not in TARGET_KINDS:
        problems.append(f"target.kind must be one of {TARGET_KINDS}")
        return None
    _unknown("target", t, _TARGET_KEYS[t["kind"]], problems)
    if t["kind"] == "gaussian":
        m, v = t.get("mean"), t.get("variances")
        if not isinstance(m, list) or not isinstance(v, list) or len(m) != len(v) or not m:
            problems.append("target.mean and target.variances must be nonempty lists of equal length")
            return None
        if not all(_is_num(x) for x in m) or not all(_is_num(x) and x > 0 for x in v):
            problems.append("target.variances must be positive numbers")
        return len(m)
    if not _is_int(t.get("dim")) or t["dim"] < 1:
        problems.append("target.dim must be a positive integer")
        return None
    if "scale" in t and not (_is_num(t["scale"]) and t["scale"] > 0):
        problems.append("target.scale must be positive")
    return t["dim"]


def _check_body(b, dim, problems) -> None:
    if not isinstance(b, dict) or b.get("kind") not in BODY_KINDS:
        problems.append(f"body.kind must be one of {BODY_KINDS}")
        return
    _unknown("body", b, _BODY_KEYS[b["kind"]], problems)
    kind = b["kind"]
    if kind == "ball":
        if not (_is_num(b.get("radius")) and b["radius"] > 0):
            problems.append("body.radius must be positive")
        if b.get("center") is not None and len(b["center"]) != dim:
            problems.append("body.center has the wrong dimension")
        if b.get("dim") is not None and b["dim"] != dim:
            problems.append("body.dim differs from the target dimension")
    elif kind == "box":
        lo, hi = b.get("lo"), b.get("hi")
        if not isinstance(lo, list) or not isinstance(hi, list) or len(lo) != dim or len(hi) != dim:
            problems.append("body.lo and body.hi must be lists matching the target dimension")
        elif any(a >= c for a, c in zip(lo, hi)):
            problems.append("body.lo must be below body.hi componentwise")
    elif kind == "simplex":
        if b.get("dim") is not None and b["dim"] != dim:
            problems.append("body.dim differs from the target dimension")
    else:
        hs = b.get("halfspaces")
        if not isinstance(hs, list) or not hs or any(len(row) != 2 or len(row[0]) != dim for row in hs):
            problems.append("body.halfspaces must be a list of [normal, offset] rows")


def _check_schedule(s, has_body, problems) -> None:
    if not isinstance(s, dict) or s.get("kind") not in SCHEDULE_KINDS:
        problems.append(f"schedule.kind must be one of {SCHEDULE_KINDS}")
        return
    kind = s["kind"]
    _unknown("schedule", s, _SCHEDULE_KEYS[kind], problems)
    if kind in ("dl-ula", "dl-myula"):
        sc = s.setdefault("scale", {})
        if not isinstance(sc, dict):
            problems.append("schedule.scale must be an object")
            sc = s["scale"] = {}
        _unknown("schedule.scale", sc, _SCALE_KEYS, problems)
        sc.setdefault("n_mult", 1.0)
        sc.setdefault("gamma_mult", 1.0)
        sc.setdefault("n_cap", None)
        if not (_is_num(sc["n_mult"]) and 0 < sc["n_mult"] <= 1):
            problems.append("schedule.scale.n_mult must lie in (0, 1]")
        if not (_is_num(sc["gamma_mult"]) and sc["gamma_mult"] > 0):
            problems.append("schedule.scale.gamma_mult must be positive")
        if sc["n_cap"] is not None and not (_is_int(sc["n_cap"]) and sc["n_cap"] >= 1):
            problems.append("schedule.scale.n_cap must be a positive integer")
    if kind == "dl-myula" and not has_body:
        problems.append("schedule kind dl-myula requires a body")
    if kind == "dl-ula" and has_body:
        problems.append("schedule kind dl-ula cannot use a body; use dl-myula")
    if kind in ("dl-ula", "dl-myula", "explicit"):
        s.setdefault("gamma_factor", 1.0)
        s.setdefault("radius_factor", 1.0)
        for key in ("gamma_factor", "radius_factor"):
            if not (_is_num(s[key]) and s[key] > 0):
                problems.append(f"schedule.{key} must be positive")
    if kind in FLAT_KINDS:
        if kind == "polynomial":
            s.setdefault("alpha", 0.0)
        s.setdefault("snapshot_every", 1)
        if not (_is_num(s.get("gamma0")) and s["gamma0"] > 0):
            problems.append("schedule.gamma0 must be positive")
        if kind == "polynomial" and not (_is_num(s["alpha"]) and 0 <= s["alpha"] <= 1):
            problems.append("schedule.alpha must lie in [0, 1]")
        if not (_is_int(s.get("N")) and s["N"] >= 1):
            problems.append("schedule.N must be a positive integer")
        elif not (_is_int(s["snapshot_every"]) and 1 <= s["snapshot_every"] <= s["N"]):
            problems.append("schedule.snapshot_every must lie in 1..N")
        if has_body:
            problems.append(f"schedule kind {kind} does not support a body")
    if kind == "explicit":
        g, n, r = s.get("gammas"), s.get("counts"), s.get("radii")
        if not all(isinstance(v, list) for v in (g, n, r)) or not len(g) == len(n) == len(r) or not g:
            problems.append("schedule.gammas, counts and radii must be nonempty lists of equal length")
        else:
            if not all(_is_num(v) and v > 0 for v in g + r):
                problems.append("schedule.gammas and radii must be positive")
            if not all(_is_int(v) and v >= 1 for v in n):
                problems.append("schedule.counts must be positive integers")
        pen = s.setdefault("penalties", None)
        if pen is not None and (not isinstance(pen, list) or len(pen) != len(g or [])):
            problems.append("schedule.penalties must match the other lists")
        if (pen is not None) != has_body:
            problems.append("explicit schedules use penalties exactly when a body is given")


def _check_checks(checks, driver, has_body, problems) -> None:
    if not isinstance(checks, list):
        problems.append("checks must be a list")
        return
    for i, c in enumerate(checks):
        if not isinstance(c, dict) or c.get("kind") not in CHECK_KINDS:
            problems.append(f"checks[{i}].kind must be one of {CHECK_KINDS}")
            continue
        _unknown(f"checks[{i}]", c, _CHECK_KEYS[c["kind"]], problems)
        kind = c["kind"]
        if kind in ("tv-decay", "radial-decay") and not _is_num(c.get("max_slope")):
            problems.append(f"checks[{i}].max_slope must be a number")
        if kind == "tv-decay" and c.get("ratio") is not None and not (_is_num(c["ratio"]) and c["ratio"] > 0):
            problems.append(f"checks[{i}].ratio must be positive")
        if kind == "frac-outside":
            if not has_body:
                problems.append(f"checks[{i}] frac-outside needs a body")
            c.setdefault("max_final", 1.0)
        if kind == "tail-mc" and not (_is_num(c.get("C")) and c["C"] > 0):
            problems.append(f"checks[{i}].C must be positive")
        if kind in ("tail-mc", "my-tail") and not (isinstance(c.get("R"), list) and c["R"]):
            problems.append(f"checks[{i}].R must be a nonempty list")
        if kind == "my-tail" and not has_body:
            problems.append(f"checks[{i}] my-tail needs a body")


def parse_config(text: str) -> ExperimentConfig:
    """Validate a JSON config and fill in defaults.

    Raises:
        ConfigError: listing every problem found.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])
    problems: list[str] = []
    _unknown("config", raw, set(_TOP), problems)
    for key in _REQUIRED:
        if raw.get(key) is None:
            problems.append(f"missing required field {key!r}")
    data = copy.deepcopy(raw)
    for key, default in _TOP.items():
        if data.get(key) is None:
            data[key] = copy.deepcopy(default)
    if any(p.startswith("missing") for p in problems):
        raise ConfigError(problems)

    dim = _check_target(data["target"], problems)
    has_body = data["body"] is not None
    if has_body and dim is not None:
        _check_body(data["body"], dim, problems)
    _check_schedule(data["schedule"], has_body, problems)
    kind = data["schedule"].get("kind") if isinstance(data["schedule"], dict) else None

    if kind in ("dl-ula", "dl-myula"):
        if not (_is_int(data["K"]) and data["K"] >= 1):
            problems.append("missing or invalid field 'K' (positive integer)")
    elif kind == "explicit":
        n_stages = len(data["schedule"].get("gammas") or [])
        if data["K"] is None:
            data["K"] = n_stages
        elif not (_is_int(data["K"]) and 1 <= data["K"] <= n_stages):
            problems.append("K must lie in 1..len(schedule.gammas)")
    elif kind in FLAT_KINDS and data["K"] is not None:
        problems.append(f"K is implied by N // snapshot_every for schedule kind {kind}; remove it")

    if not (_is_int(data["n_chains"]) and data["n_chains"] >= 1):
        problems.append("n_chains must be a positive integer")
    if not (_is_int(data["seed"]) and 0 <= data["seed"] < 2**64):
        problems.append("seed must be an integer in [0, 2^64)")
    for key in ("n_proj", "reference_size", "max_records", "block_size"):
        if not (_is_int(data[key]) and data[key] >= (0 if key == "max_records" else 1)):
            problems.append(f"{key} must be a positive integer")
    if not (_is_num(data["rescale"]) and data["rescale"] > 0):
        problems.append("rescale must be positive")
    if data["snapshot"] not in SNAPSHOT_SIDES:
        problems.append(f"snapshot must be one of {SNAPSHOT_SIDES}")
    if data["x0"] is not None and (not isinstance(data["x0"], list) or len(data["x0"]) != dim):
        problems.append("x0 must be a list matching the target dimension")

    metrics = data["metrics"]
    if not isinstance(metrics, list) or any(m not in METRIC_KINDS for m in metrics):
        problems.append(f"metrics must be a list drawn from {METRIC_KINDS}")
    else:
        if "w2-1d" in metrics and dim is not None and dim != 1:
            problems.append("metric w2-1d needs a one-dimensional target")
        needs_ref = {"tv", "tv-radial", "w2-sliced", "w2-1d"} & set(metrics)
        if needs_ref and data["target"].get("kind") == "pseudo-huber":
            problems.append(f"metrics {sorted(needs_ref)} need an exact reference; pseudo-huber has none")
        if needs_ref and data["target"].get("kind") == "uniform" and not has_body:
            problems.append("a uniform target needs a body")

    hist = data["histogram"] or {}
    if not isinstance(hist, dict):
        problems.append("histogram must be an object")
        hist = {}
    _unknown("histogram", hist, _HIST_KEYS, problems)
    hist.setdefault("bins", 64)
    if not (_is_int(hist["bins"]) and hist["bins"] >= 2):
        problems.append("histogram.bins must be an integer >= 2")
    if kind in FLAT_KINDS and "tv" in (metrics or []) and "half_width" not in hist and "lo" not in hist:
        problems.append(f"schedule kind {kind} has no clip radius; set histogram.half_width or lo/hi for tv")
    data["histogram"] = hist

    _check_checks(data["checks"], kind, has_body, problems)
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(data)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text: sorted keys, defaults included."""
    return json.dumps(cfg.data, sort_keys=True, indent=2) + "\n"
