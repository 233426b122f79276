import json
import math

import numpy as np
import pytest

from langevin_lab.bounds import BoundReport
from langevin_lab.config import parse_config
from langevin_lab.experiment import (
    MetricSeries,
    build_run_spec,
    emit_plot_data,
    exact_reference_sampler,
    load_bound_reports,
    report,
    run_experiment,
    uniform_ball_radial_masses,
)
from langevin_lab.geometry import ball_body, box_body, polytope_body, simplex_body
from langevin_lab.metrics import EmpiricalMeasure, HistogramSpec, histogram_probs
from langevin_lab.sampler import SamplerError
from langevin_lab.schedule import total_iterations
from langevin_lab.targets import GaussianOracle


def cfg_of(**kw):
    d = {
        "target": {"kind": "gaussian", "mean": [0, 0], "variances": [1, 1]},
        "schedule": {"kind": "dl-ula", "scale": {"n_mult": 1e-4, "gamma_mult": 1.4778112, "n_cap": 2000}},
        "K": 3,
        "n_chains": 500,
        "seed": 3,
        "metrics": ["tv", "w2-sliced", "moments"],
        "reference_size": 5000,
    }
    d.update(kw)
    return parse_config(json.dumps(d))


MYULA = {
    "target": {"kind": "uniform", "dim": 2},
    "body": {"kind": "ball", "radius": 1.0},
    "schedule": {"kind": "dl-myula", "scale": {"n_mult": 0.2, "gamma_mult": 3.0, "n_cap": 3000}},
    "K": 3,
    "n_chains": 1000,
    "seed": 1,
    "snapshot": "pre-clip",
    "metrics": ["tv-radial", "moments"],
    "checks": [{"kind": "frac-outside", "max_final": 0.5}, {"kind": "my-tail", "R": [1.0, 1.2, 1.4]}],
}


def test_single_chain_single_stage():
    res = run_experiment(cfg_of(K=1, n_chains=1, metrics=["moments"]))
    assert len(res.series.rows) == 1
    assert len(res.records) == 1
    assert res.series.rows[0]["se_mean_0"] is not None


def test_series_columns_and_totals():
    cfg = cfg_of()
    res = run_experiment(cfg)
    s = res.series
    assert s.column("outer_k") == [1, 2, 3]
    tot = s.column("total_iters")
    assert all(a < b for a, b in zip(tot, tot[1:]))
    assert tot == [total_iterations(res.spec.schedule, k) for k in (1, 2, 3)]
    assert s.column("frac_outside_body") == [0.0] * 3
    assert all(0 <= v <= 1 for v in s.column("tv"))
    assert s.digest == cfg.digest
    x = res.samples(3)
    assert x.shape == (500, 2)
    assert s.rows[2]["m2_0"] == pytest.approx(float(np.mean(x[:, 0] ** 2)))


def test_outputs_byte_identical(tmp_path):
    cfg = cfg_of(checks=[{"kind": "tv-decay", "max_slope": 0.0}])
    run_experiment(cfg, out_dir=tmp_path / "a")
    run_experiment(cfg, threads=3, out_dir=tmp_path / "b")
    for name in ("series.csv", "records.jsonl", "config.json", "bounds.jsonl", "plot_tv.dat", "plot_w2.dat"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_csv_round_trip():
    res = run_experiment(cfg_of(K=2, n_chains=50))
    back = MetricSeries.from_csv(res.series.to_csv(), res.series.digest)
    assert back.to_csv() == res.series.to_csv()
    assert back.rows[1]["tv"] == res.series.rows[1]["tv"]
    assert back.rows[0]["lambda_k"] is None


def test_gaussian_tv_strictly_decreasing():
    res = run_experiment(cfg_of(n_chains=10_000, metrics=["tv"], seed=11))
    tv = res.series.column("tv")
    assert tv[0] > tv[1] > tv[2]


def test_constrained_experiment():
    cfg = parse_config(json.dumps(MYULA))
    res = run_experiment(cfg)
    f = res.series.column("frac_outside_body")
    se = res.series.column("se_frac_outside")
    assert all(b <= a + 2 * math.hypot(sa, sb) for a, b, sa, sb in zip(f, f[1:], se, se[1:]))
    assert res.series.column("lambda_k") == pytest.approx([res.spec.schedule.penalty(k) for k in (1, 2, 3)])
    names = [r.name for r in res.reports]
    assert names == ["frac-outside-monotone", "frac-outside-final", "my-tail"]
    assert all(r.holds for r in res.reports[:2])


def test_build_run_spec_flat_and_explicit():
    flat = parse_config(json.dumps({
        "target": {"kind": "gaussian", "mean": [0], "variances": [1]},
        "schedule": {"kind": "polynomial", "gamma0": 0.2, "alpha": 0.5, "N": 40, "snapshot_every": 10},
        "n_chains": 3, "seed": 0, "metrics": ["moments", "w2-1d"]}))
    spec = build_run_spec(flat)
    assert spec.driver == "ula" and spec.gammas(4) == pytest.approx(0.1)
    res = run_experiment(flat)
    assert res.series.column("total_iters") == [10, 20, 30, 40]
    ex = cfg_of(schedule={"kind": "explicit", "gammas": [0.1, 0.05], "counts": [3, 4], "radii": [2, 4],
                          "gamma_factor": 2.0}, K=2)
    st = build_run_spec(ex).schedule
    assert st.stage(2) == pytest.approx((0.1, 4, 4.0, None))


def test_partial_series_written_on_divergence(tmp_path):
    cfg = cfg_of(schedule={"kind": "explicit", "gammas": [0.1, 0.1, 3.0], "counts": [5, 5, 300],
                           "radii": [1e6] * 3}, K=None, n_chains=20, x0=[1.0, 1.0])
    with pytest.raises(SamplerError):
        run_experiment(cfg, out_dir=tmp_path)
    rows = (tmp_path / "series.csv").read_text().splitlines()
    assert len(rows) == 3
    assert rows[2].startswith("2,")


# ---------------------------------------------------------------------------
# reference sampling


def test_uniform_ball_second_moment():
    m = exact_reference_sampler("uniform-body", 100_000, 0, body=ball_body(1.0, 2))
    sq = np.sum(m.points**2, axis=1)
    assert np.all(sq <= 1.0)
    assert abs(sq.mean() - 0.5) < 3 * sq.std(ddof=1) / math.sqrt(sq.size)


def test_reference_bodies():
    box = exact_reference_sampler("uniform-body", 20_000, 1, body=box_body([-1, 0], [1, 3]))
    assert np.all(box.points >= [-1, 0]) and np.all(box.points <= [1, 3])
    np.testing.assert_allclose(box.mean(), [0, 1.5], atol=0.05)
    spx = exact_reference_sampler("uniform-body", 20_000, 1, body=simplex_body(3))
    np.testing.assert_allclose(spx.points.sum(axis=1), 1.0)
    assert np.all(spx.points > 0)
    # uniform on the simplex is Dirichlet(1,1,1): each coordinate has mean 1/3 and variance 1/18
    np.testing.assert_allclose(spx.points.var(axis=0), 1 / 18, rtol=0.05)
    tri = polytope_body([([-1, 0], 0), ([0, -1], 0), ([1, 1], 1)])
    pts = exact_reference_sampler("uniform-body", 20_000, 1, body=tri).points
    assert np.all(tri.contains(pts))
    np.testing.assert_allclose(pts.mean(axis=0), [1 / 3, 1 / 3], atol=0.01)


def test_reference_gaussian_restricted_and_plain():
    g = GaussianOracle([1.0], [4.0])
    x = exact_reference_sampler("gaussian", 50_000, 2, oracle=g).points[:, 0]
    assert abs(x.mean() - 1.0) < 4 * 2 / math.sqrt(x.size)
    y = exact_reference_sampler("gaussian", 5000, 2, dim=2, body=ball_body(1.0, 2)).points
    assert np.all(np.linalg.norm(y, axis=1) <= 1.0)


def test_reference_independent_of_chain_streams():
    a = exact_reference_sampler("gaussian", 10, 0, dim=1).points
    b = exact_reference_sampler("gaussian", 10, 1, dim=1).points
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, exact_reference_sampler("gaussian", 10, 0, dim=1).points)


def test_reference_low_acceptance_errors():
    tiny = polytope_body([([-1, 0], 0), ([0, -1], 0), ([1, 1], 1), ([1, -1], 1e-6), ([-1, 1], 1e-6)])
    with pytest.raises(ValueError, match="bounding box"):
        exact_reference_sampler("uniform-body", 1000, 0, body=tiny)
    with pytest.raises(ValueError):
        exact_reference_sampler("uniform-body", 10, 0)


def test_radial_masses_match_samples():
    h = HistogramSpec([0.0], [1.5], 10)
    p = uniform_ball_radial_masses(1.0, 3, h)
    assert p.sum() == pytest.approx(1.0)
    assert p[-1] == pytest.approx(0.0)
    r = exact_reference_sampler("uniform-body", 200_000, 0, body=ball_body(1.0, 3)).norms()
    q = histogram_probs(EmpiricalMeasure(r), h)
    np.testing.assert_allclose(q, p, atol=0.005)


# ---------------------------------------------------------------------------
# plot data and reports


def _series(tvs):
    rows = [{"outer_k": k, "total_iters": 10 * k, "tv": t, "w2_sliced": 0.5 / k} for k, t in enumerate(tvs, 1)]
    return MetricSeries(["outer_k", "total_iters", "tv", "w2_sliced"], rows, "abc123")


def _data_lines(path):
    return [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]


def test_plot_data_files(tmp_path):
    tv_path, w2_path = emit_plot_data(_series([0.5, 0.3, 0.1]), tmp_path / "plot")
    assert len(_data_lines(tv_path)) == 3 and len(_data_lines(w2_path)) == 3
    assert tv_path.read_text().startswith("# config_digest abc123")
    x, y = map(float, _data_lines(w2_path)[1].split())
    assert (x, y) == pytest.approx((math.log(20), math.log(0.25)))


def test_plot_data_skips_zero(tmp_path):
    tv_path, _ = emit_plot_data(_series([0.5, 0.0, 0.1]), tmp_path / "plot")
    assert len(_data_lines(tv_path)) == 2
    assert any(ln.startswith("# skipped outer_k=2") for ln in tv_path.read_text().splitlines())
    with pytest.raises(ValueError):
        emit_plot_data(MetricSeries(["outer_k"], []), tmp_path / "empty")


def test_report_exit_codes():
    ok = BoundReport.compare("good", 1.0, 2.0)
    bad = BoundReport.compare("broken-bound", 3.0, 2.0)
    text, code = report([], _series([0.5, 0.3, 0.1]), [ok])
    assert code == 0 and "fitted decay slope" in text
    text, code = report([], None, [ok, bad])
    assert code == 1 and "FAILED broken-bound" in text
    text, code = report([], None, [])
    assert code == 0 and "no checks requested" in text


def test_bound_reports_round_trip():
    reps = [BoundReport.compare("a", 1.0, 2.0, 0.1, R=2.0), BoundReport.compare("b", -math.inf, 0.0)]
    back = load_bound_reports("".join(r.to_json() + "\n" for r in reps))
    assert [(r.name, r.lhs, r.rhs, r.holds) for r in back] == [(r.name, r.lhs, r.rhs, r.holds) for r in reps]
