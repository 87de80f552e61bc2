import csv
import json

import numpy as np
import pytest

from sbmvi import cli
from sbmvi.netgen import GeneratorSpec, save_spec


@pytest.fixture
def spec_file(tmp_path):
    theta = np.full((3, 3), 0.05) + np.diag([0.75, 0.75, 0.75])
    path = tmp_path / "toy.toml"
    save_spec(GeneratorSpec(45, theta, block_sizes=[15, 15, 15], seed=3, name="toy"), path)
    return path


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    return code


def _generate(tmp_path, spec_file):
    out = tmp_path / "gen"
    assert run(["generate", "--spec", spec_file, "--out", out]) == cli.EXIT_OK
    return out


def test_generate_outputs(tmp_path, spec_file):
    out = _generate(tmp_path, spec_file)
    for name in ("network.txt", "truth.txt", "spec.toml", "summary.json", "config.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["n_nodes"] == 45
    config = json.loads((out / "config.json").read_text())
    assert config["rng_algorithm"] == "PCG64"


def test_generate_is_reproducible(tmp_path, spec_file):
    a = _generate(tmp_path / "a", spec_file)
    b = _generate(tmp_path / "b", spec_file)
    assert (a / "network.txt").read_text() == (b / "network.txt").read_text()


@pytest.mark.parametrize("engine,extra,min_ari", [
    ("cavi", [], 0.0),  # a single CAVI restart can merge every block on small graphs
    ("sgvb", ["--restarts", "2", "--fixed-epochs", "40"], 0.8),
    ("mcmc", ["--iters", "400", "--chains", "2"], 0.9)])
def test_fit_each_engine(tmp_path, spec_file, engine, extra, min_ari):
    gen = _generate(tmp_path, spec_file)
    out = tmp_path / engine
    code = run(["fit", "--engine", engine, "--edges", gen / "network.txt", "--truth",
                gen / "truth.txt", "-K", 5, "--out", out] + extra)
    assert code == cli.EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["ari"] >= min_ari
    assert (out / "checkpoint.json").exists() and (out / "partition.txt").exists()
    if engine == "mcmc":
        assert (out / "trace_chain1.csv").exists() and (out / "samples.npz").exists()
    else:
        rows = list(csv.DictReader(open(out / "restarts.csv")))
        assert [r["restart"] for r in rows] == [str(i) for i in range(len(rows))]
        assert all(r["ari_if_truth_known"] != "" for r in rows)
        header = (out / "trace_restart0.csv").read_text().splitlines()[0]
        assert header.startswith("epoch,t,noisy_elbo" if engine == "sgvb" else "sweep,elbo")


def test_budget_exit_code(tmp_path, spec_file):
    gen = _generate(tmp_path, spec_file)
    code = run(["fit", "--engine", "cavi", "--edges", gen / "network.txt", "-K", 5,
                "--max-sweeps", 1, "--cavi-rel-tol", 1e-15, "--out", tmp_path / "f"])
    assert code == cli.EXIT_BUDGET
    code = run(["fit", "--engine", "sgvb", "--edges", gen / "network.txt", "-K", 5,
                "--fixed-epochs", 2, "--out", tmp_path / "g"])
    assert code == cli.EXIT_OK


def test_usage_errors(tmp_path, spec_file):
    with pytest.raises(SystemExit) as exc:
        run(["fit", "--engine", "cavi", "--preset", "sim7-easy", "--spec", spec_file, "--out", tmp_path])
    assert exc.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run(["fit", "--engine", "sgvb", "--spec", spec_file, "--fixed-epochs", 2,
             "--time-budget-secs", 1, "--out", tmp_path])
    assert exc.value.code == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        run(["fit", "--engine", "sgvb", "--spec", spec_file, "--fixed-epochs", 2,
             "--min-epochs", 1, "--out", tmp_path])
    assert exc.value.code == cli.EXIT_USAGE


def test_missing_file(tmp_path):
    code = run(["fit", "--engine", "cavi", "--edges", tmp_path / "nope.txt", "--out", tmp_path / "o"])
    assert code == cli.EXIT_FILE


def test_crossval_and_evaluate(tmp_path, spec_file):
    out = tmp_path / "cv"
    code = run(["crossval", "--spec", spec_file, "--engines", "mcmc,sgvb", "--folds", 3,
                "-K", 4, "--fixed-epochs", 20, "--iters", 300, "--out", out])
    assert code == cli.EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    assert set(metrics["engines"]) == {"mcmc", "sgvb"}
    assert all(0.5 < m["median_auc"] <= 1 for m in metrics["engines"].values())
    assert (out / "roc_fold2_sgvb.csv").exists()
    assert len(json.loads((out / "splits.json").read_text())) == 3

    gen = _generate(tmp_path, spec_file)
    fits = []
    for eng in ("sgvb", "mcmc"):
        d = tmp_path / f"fit_{eng}"
        run(["fit", "--engine", eng, "--edges", gen / "network.txt", "-K", 4, "--iters", 300,
             "--restarts", 4, "--fixed-epochs", 40, "--out", d])
        fits.append(d / "checkpoint.json")
    ev = tmp_path / "ev"
    code = run(["evaluate", *fits, "--truth", gen / "truth.txt", "--network", gen / "network.txt",
                "--out", ev])
    assert code == cli.EXIT_OK
    metrics = json.loads((ev / "metrics.json").read_text())
    assert metrics["cross_ari"] > 0.7 and metrics["fit1_ari"] > 0.9
    assert (ev / "overlap.csv").exists() and (ev / "fit1_order.txt").exists()
    assert np.loadtxt(ev / "fit0_cocluster.csv", delimiter=",").shape == (45, 45)


def test_generate_from_fit(tmp_path, spec_file):
    gen = _generate(tmp_path, spec_file)
    fit = tmp_path / "fit"
    run(["fit", "--engine", "mcmc", "--edges", gen / "network.txt", "-K", 4, "--iters", 400, "--out", fit])
    out = tmp_path / "resim"
    assert run(["generate", "--from-fit", fit / "checkpoint.json", "--seed", 2, "--out", out]) == 0
    spec = json.loads((out / "spec.json").read_text())
    assert spec["n_blocks"] == 3
    assert len(np.loadtxt(out / "truth.txt")) == 45


def test_sweep(tmp_path, spec_file):
    out = tmp_path / "sw"
    code = run(["sweep", "--spec", spec_file, "-K", 4, "--kappas", "0.6", "--taus", "1",
                "--omegas", "0.25,0.5", "--restarts", 2, "--cavi-runs", 1, "--out", out])
    assert code == cli.EXIT_OK
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("# budget_seconds=") and lines[1].startswith("# cavi_f_minus_h=")
    rows = list(csv.DictReader(lines[2:]))
    assert len(rows) == 4
    assert set(rows[0]) == set(cli.experiments.SWEEP_COLUMNS)
