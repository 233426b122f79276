"""Command line entry point.

Exit codes: 0 when every requested bound check holds, 1 when one fails,
2 for usage, config or I/O errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bounds
from .config import ConfigError, parse_config
from .experiment import MetricSeries, exact_reference_sampler, load_bound_reports, report, run_experiment
from .sampler import RunRecord, SamplerError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load_config(args):
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        cfg = cfg.with_overrides(seed=args.seed)
    return cfg


def cmd_sample(args) -> int:
    cfg = _load_config(args).with_overrides(n_chains=1, metrics=["moments"], checks=[], max_records=1)
    out = Path(args.out) if args.out else None
    res = run_experiment(cfg, threads=1, out_dir=out)
    rec = res.records[0]
    print(f"driver {rec.driver}  seed {rec.seed}  digest {rec.config_digest[:12]}")
    for s in rec.snapshots:
        print(f"k={s.k:<4d} total={s.total_iters:<12d} gamma={s.gamma:<12.4g} x={list(map(float, s.post_clip))}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    res = run_experiment(cfg, threads=args.threads, out_dir=args.out)
    text, code = report(res.records, res.series, res.reports)
    print(text, end="")
    return code


def analytic_suite(seed: int = 0, n_tail: int = 10**6) -> list[bounds.BoundReport]:
    """Closed-form and exact-sampling inequality checks that need no sampler run."""
    reps = [bounds.check_descent_lemma_gaussian(g, n) for g in (0.2, 0.1, 0.05, 0.01) for n in (10, 100, 1000)]
    pairs = bounds.random_gaussian_pairs(100, seed)
    reps += [bounds.check_w2_tv_gaussian_pair(a, b) for a, b in pairs]
    for a, b in pairs:
        reps += bounds.check_w2_subexp_gaussian_pair(a, b)
    reps += [bounds.check_pinsker_gaussian_pair(a, b) for a, b in pairs]
    for d in (1, 3):
        cloud = exact_reference_sampler("gaussian", n_tail, seed, dim=d)
        reps += bounds.check_tail_mc(cloud, d**0.5, (1.5, 2.0, 3.0))
    return reps


def cmd_check_bounds(args) -> int:
    reps = analytic_suite(args.seed if args.seed is not None else 0)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bounds.jsonl").write_text("".join(r.to_json() + "\n" for r in reps))
    print(bounds.format_table(reps))
    failed = sum(not r.holds for r in reps)
    print(f"checks: {len(reps) - failed} passed, {failed} failed")
    return EXIT_OK if failed == 0 else EXIT_FAIL


def cmd_report(args) -> int:
    out = Path(args.out)
    series = None
    if (out / "series.csv").exists():
        digest = ""
        if (out / "config.json").exists():
            digest = parse_config((out / "config.json").read_text()).digest
        series = MetricSeries.from_csv((out / "series.csv").read_text(), digest)
    records = RunRecord.from_jsonl((out / "records.jsonl").read_text()) if (out / "records.jsonl").exists() else []
    reps = []
    for f in sorted(out.rglob("bounds.jsonl")):
        reps += load_bound_reports(f.read_text())
    if series is None and not reps and not records:
        raise FileNotFoundError(f"no experiment outputs found in {out}")
    text, code = report(records, series, reps)
    print(text, end="")
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="langevin-lab", description="Annealed Langevin sampling experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, with_config=True):
        if with_config:
            sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--threads", type=int, default=1, help="worker threads (wall-clock only)")

    sp = sub.add_parser("sample", help="run one chain")
    common(sp)
    sp.set_defaults(func=cmd_sample)
    sp = sub.add_parser("experiment", help="replicated chains with metrics and checks")
    common(sp)
    sp.set_defaults(func=cmd_experiment)
    sp = sub.add_parser("check-bounds", help="analytic and exact-sampling inequality suite")
    common(sp, with_config=False)
    sp.set_defaults(func=cmd_check_bounds)
    sp = sub.add_parser("report", help="summarise outputs in --out (searched recursively for bounds.jsonl)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "threads", 1) < 1:
        parser.error("--threads must be positive")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SamplerError as exc:
        print(f"sampler error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
