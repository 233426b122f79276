import json

import pytest

from langevin_lab import cli

GAUSS = {
    "target": {"kind": "gaussian", "mean": [0], "variances": [1]},
    "schedule": {"kind": "dl-ula", "scale": {"n_mult": 0.001, "n_cap": 500}},
    "K": 3,
    "n_chains": 200,
    "seed": 4,
    "metrics": ["tv", "w2-1d", "moments"],
    "reference_size": 2000,
}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_sample(tmp_path, capsys):
    code = cli.main(["sample", "--config", write(tmp_path, GAUSS), "--out", str(tmp_path / "s")])
    out = capsys.readouterr().out
    assert code == 0
    assert out.count("k=") == 3
    assert (tmp_path / "s" / "records.jsonl").exists()


def test_experiment_then_report(tmp_path, capsys):
    out_dir = tmp_path / "run"
    cfg = dict(GAUSS, checks=[{"kind": "tv-decay", "max_slope": 10.0}])
    assert cli.main(["experiment", "--config", write(tmp_path, cfg), "--out", str(out_dir)]) == 0
    first = capsys.readouterr().out
    assert "tv-decay" in first
    assert cli.main(["report", "--out", str(out_dir)]) == 0
    assert "tv-decay" in capsys.readouterr().out


def test_failing_check_exit_1(tmp_path, capsys):
    cfg = dict(GAUSS, checks=[{"kind": "tv-decay", "max_slope": -100.0}])
    assert cli.main(["experiment", "--config", write(tmp_path, cfg)]) == 1
    assert "FAILED tv-decay" in capsys.readouterr().out


def test_seed_and_threads_flags(tmp_path):
    path = write(tmp_path, GAUSS)
    cli.main(["experiment", "--config", path, "--out", str(tmp_path / "a"), "--threads", "2"])
    cli.main(["experiment", "--config", path, "--out", str(tmp_path / "b")])
    cli.main(["experiment", "--config", path, "--out", str(tmp_path / "c"), "--seed", "5"])
    a, b, c = ((tmp_path / x / "series.csv").read_bytes() for x in "abc")
    assert a == b and a != c


@pytest.mark.parametrize(
    "argv",
    [
        ["experiment", "--config", "/nonexistent/cfg.json"],
        ["report", "--out", "/nonexistent/dir"],
    ],
)
def test_io_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_bad_config_exit_2(tmp_path, capsys):
    bad = dict(GAUSS)
    del bad["seed"]
    assert cli.main(["experiment", "--config", write(tmp_path, bad)]) == 2
    assert "seed" in capsys.readouterr().err
    (tmp_path / "junk.json").write_text("{oops")
    assert cli.main(["sample", "--config", str(tmp_path / "junk.json")]) == 2


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["experiment"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["experiment", "--config", write(tmp_path, GAUSS), "--threads", "0"])
    assert info.value.code == 2


def test_sampler_error_exit_1(tmp_path, capsys):
    cfg = dict(GAUSS, K=None, x0=[1.0],
               schedule={"kind": "explicit", "gammas": [3.0], "counts": [300], "radii": [1e6]})
    assert cli.main(["experiment", "--config", write(tmp_path, cfg)]) == 1
    assert "sampler error" in capsys.readouterr().err


def test_check_bounds(tmp_path, capsys):
    assert cli.main(["check-bounds", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "0 failed" in out
    lines = (tmp_path / "bounds.jsonl").read_text().splitlines()
    assert len(lines) > 400
    assert cli.main(["report", "--out", str(tmp_path)]) == 0
