import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from hobm import cli, decomposition, distribution, hbm, lattice, plots, rbm
from hobm.config import ConfigError, load_config, parse_config

SMALL = {
    "n": 3,
    "sample_sizes": [20, 100],
    "replicates": 2,
    "base_seed": 11,
    "hbm": {"orders": [1, 3]},
    "rbm": {"hidden": [0, 1], "mle_sample_size": 2000},
    "cd": {"total_updates": 300},
}


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


# -- config -------------------------------------------------------------------------


def test_shipped_configs_validate():
    root = Path(cli.__file__).parent / "configs"
    acc = load_config(root / "acceptance.json")
    assert acc.n == 4 and acc.hbm_orders == (1, 2, 3, 4) and acc.rbm_hidden == (0, 2)
    full = load_config(root / "full.json")
    assert full.n == 10 and full.replicates == 24 and len(full.sample_sizes) == 12
    assert full.hbm_orders == (1, 4, 7, 10) and full.rbm_hidden == (0, 5, 10, 15)


def test_config_rejects_unknown_keys_and_cap():
    with pytest.raises(ConfigError, match="colour"):
        parse_config({**SMALL, "colour": "red"})
    with pytest.raises(ConfigError, match="dense cap"):
        parse_config({**SMALL, "n": 21})
    with pytest.raises(ConfigError, match="ascending"):
        parse_config({**SMALL, "sample_sizes": [100, 20]})
    with pytest.raises(ConfigError, match="exceed"):
        parse_config({**SMALL, "hbm": {"orders": [4]}})


def test_config_hash_and_overrides(tmp_path):
    path = write_config(tmp_path, SMALL)
    cfg = load_config(path)
    assert len(cfg.config_hash) == 64
    over = cfg.with_overrides(mode="sampled", seed=5)
    assert over.mode == "sampled" and over.fit.mode == "sampled" and over.base_seed == 5


# -- generate ------------------------------------------------------------------------


def test_generate_counts_and_determinism(tmp_path):
    cfg = write_config(tmp_path, SMALL)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run("generate", "--config", cfg, "--out", out1) == 0
    assert run("generate", "--config", cfg, "--out", out2) == 0
    files1 = sorted(p.relative_to(out1) for p in out1.rglob("*") if p.is_file())
    assert len(files1) == 1 + 2 * 2
    for rel in files1:
        assert (out1 / rel).read_bytes() == (out2 / rel).read_bytes()
    p, prov = distribution.load_distribution(out1 / "truth.dist")
    assert p.n == 3 and prov["role"] == "truth"
    d, prov = distribution.load_dataset(out1 / "datasets" / "N100_r01.counts")
    assert d.total == 100 and prov["replicate"] == 1 and prov["sample_size"] == 100


def test_generate_refuses_non_empty_out(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL)
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert run("generate", "--config", cfg, "--out", out) == 2
    assert "--force" in capsys.readouterr().err
    assert run("generate", "--config", cfg, "--out", out, "--force") == 0


def test_generate_rejects_n21(tmp_path, capsys):
    cfg = write_config(tmp_path, {**SMALL, "n": 21})
    assert run("generate", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "dense cap" in capsys.readouterr().err


def test_missing_required_flag_is_usage_error():
    with pytest.raises(SystemExit) as info:
        run("generate")
    assert info.value.code == 2


# -- fit ---------------------------------------------------------------------------------


@pytest.fixture
def tiny_dataset(tmp_path):
    path = tmp_path / "tiny.counts"
    distribution.save_dataset(path, distribution.EmpiricalDataset(np.array([3, 5, 2, 6])))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_fit_hbm_saturated(tmp_path, tiny_dataset, capsys):
    cfg = write_config(tmp_path, {"n": 2, "sample_sizes": [16]})
    out = tmp_path / "fit"
    assert run("fit", "--config", cfg, "--model", "hbm", "--dataset", tiny_dataset, "--out", out) == 0
    trace = read_csv(out / "trace.csv")
    assert float(trace[-1]["grad_norm"]) < 1e-6
    model, prov = hbm.load_model(out / "model.hbm")
    assert model.k == 2 and prov["converged"]
    p_hat = distribution.DenseDistribution(np.array([3, 5, 2, 6]) / 16)
    assert distribution.kl_divergence(p_hat, model.distribution()) < 1e-8
    summary = json.loads(capsys.readouterr().out)
    assert summary["converged"] and summary["log_z"] == pytest.approx(summary["exact_log_z"])


def test_fit_rbm_zero_hidden(tmp_path, tiny_dataset):
    cfg = write_config(tmp_path, {"n": 2, "sample_sizes": [16]})
    out = tmp_path / "fit"
    assert run("fit", "--config", cfg, "--model", "rbm", "--hidden", 0, "--dataset", tiny_dataset, "--out", out) == 0
    model, _ = rbm.load_model(out / "model.rbm")
    marg = np.array([(5 + 6) / 16, (2 + 6) / 16])
    target = np.array([(1 - marg[0]) * (1 - marg[1]), marg[0] * (1 - marg[1]), (1 - marg[0]) * marg[1], marg.prod()])
    q = rbm.exact_visible_marginal(model)
    assert distribution.kl_divergence(distribution.DenseDistribution(target), q) < 1e-2
    trace = read_csv(out / "trace.csv")
    assert list(trace[0]) == ["epoch", "updates", "kl"]


def test_fit_sampled_reports_ais_log_z(tmp_path):
    cfg = write_config(
        tmp_path,
        {
            "n": 4,
            "sample_sizes": [200],
            "mode": "sampled",
            "fit": {"max_iterations": 40, "report_every": 20},
            "gibbs": {"num_samples": 2000, "burn_in": 50},
        },
    )
    rng = np.random.default_rng(0)
    data = tmp_path / "d.counts"
    distribution.save_dataset(data, distribution.EmpiricalDataset(rng.multinomial(200, np.full(16, 1 / 16))))
    out = tmp_path / "fit"
    assert run("fit", "--config", cfg, "--model", "hbm", "--order", 2, "--dataset", data, "--out", out) == 0
    trace = read_csv(out / "trace.csv")
    reported = [row for row in trace if row["log_z"] != "nan"]
    assert [int(r["iteration"]) for r in reported] == [0, 20, 40]
    model, _ = hbm.load_model(out / "model.hbm")
    assert abs(float(reported[-1]["log_z"]) - hbm.exact_log_z(model)) < 0.05


def test_fit_non_convergence_exit_code(tmp_path, monkeypatch, capsys):
    def diverge(*args, **kwargs):
        raise hbm.NonConvergenceError(
            "gradient blew up", {"iterations": 2, "grad_norm": 9.0, "grad_norms": [0.1, 1.0, 9.0], "log_z": [1, 2, 3]}
        )

    monkeypatch.setattr(hbm, "fit_mle", diverge)
    cfg = write_config(tmp_path, {"n": 2, "sample_sizes": [16]})
    data = tmp_path / "d.counts"
    distribution.save_dataset(data, distribution.EmpiricalDataset(np.array([1, 2, 3, 4])))
    out = tmp_path / "fit"
    assert run("fit", "--config", cfg, "--model", "hbm", "--dataset", data, "--out", out) == 3
    assert "gradient blew up" in capsys.readouterr().err
    assert len(read_csv(out / "trace.csv")) == 3


def test_fit_rejects_mismatched_dataset(tmp_path, tiny_dataset):
    cfg = write_config(tmp_path, {"n": 3, "sample_sizes": [16]})
    assert run("fit", "--config", cfg, "--model", "hbm", "--dataset", tiny_dataset, "--out", tmp_path / "f") == 2


# -- decompose -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("decompose")
    cfg = write_config(base, SMALL)
    out = base / "out"
    code = run("decompose", "--config", cfg, "--out", out, "--workers", 1)
    return code, out, cfg


def test_decompose_outputs(small_run):
    code, out, cfg = small_run
    assert code == 0
    with open(out / "results.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == decomposition.CSV_COLUMNS
    rows = read_csv(out / "results.csv")
    assert len(rows) == (2 + 2) * 2
    assert all(r["status"] == "ok" for r in rows)
    assert [(r["family"], r["complexity"]) for r in rows[::2]] == [("hbm", "1"), ("hbm", "3"), ("rbm", "0"), ("rbm", "1")]
    for r in rows:
        if r["family"] == "hbm":
            assert abs(float(r["pythagoras_residual"])) < 1e-6
    meta = json.loads((out / "results_meta.json").read_text())
    assert meta["config_hash"] == load_config(cfg).config_hash
    assert meta["rows"] == len(rows)
    assert {p.name for p in (out / "plots").iterdir()} == {
        "hbm_error_vs_sample_size.svg",
        "hbm_by_complexity.svg",
        "hbm_by_sample_size.svg",
        "rbm_error_vs_sample_size.svg",
        "rbm_by_complexity.svg",
        "rbm_by_sample_size.svg",
        "total_vs_params.svg",
    }


def test_decompose_floats_round_trip(small_run):
    _, out, _ = small_run
    for r in read_csv(out / "results.csv"):
        for key in ("bias_nats", "variance_nats", "variance_stderr", "total_nats", "pythagoras_residual"):
            assert r[key] == f"{float(r[key]):.17g}"


def test_plots_regenerate_from_csv(small_run, tmp_path):
    _, out, _ = small_run
    written = plots.plot_results(out / "results.csv", tmp_path / "again")
    for path in written:
        assert path.read_bytes() == (out / "plots" / path.name).read_bytes()


def test_decompose_determinism_and_workers(small_run, tmp_path):
    _, out, cfg = small_run
    other = tmp_path / "again"
    assert run("decompose", "--config", cfg, "--out", other, "--workers", 2) == 0

    def strip(path):
        rows = read_csv(path)
        for r in rows:
            r.pop("wall_time_s")
        return rows

    assert strip(out / "results.csv") == strip(other / "results.csv")


def test_decompose_partial_exit_code(tmp_path, monkeypatch):
    real = hbm.fit_mle
    calls = {"n": 0}

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 1:
            raise hbm.NonConvergenceError("boom", {})
        return real(*args, **kwargs)

    monkeypatch.setattr(hbm, "fit_mle", flaky)
    cfg = write_config(tmp_path, {"n": 2, "sample_sizes": [20], "replicates": 2, "hbm": {"orders": [1]}})
    out = tmp_path / "o"
    assert run("decompose", "--config", cfg, "--out", out, "--workers", 1) == 3
    rows = read_csv(out / "results.csv")
    assert rows[0]["status"] == "partial" and rows[0]["replicates_ok"] == "1"
    meta = json.loads((out / "results_meta.json").read_text())
    assert "boom" in meta["rows_detail"][0]["failures"][0]


def test_decompose_all_failed_exit_code(tmp_path, monkeypatch):
    def always(*args, **kwargs):
        raise hbm.NonConvergenceError("boom", {})

    monkeypatch.setattr(hbm, "fit_mle", always)
    cfg = write_config(tmp_path, {"n": 2, "sample_sizes": [20], "replicates": 2, "hbm": {"orders": [1]}})
    assert run("decompose", "--config", cfg, "--out", tmp_path / "o", "--workers", 1) == 1


# -- verify ------------------------------------------------------------------------------------


def test_verify_passes(tmp_path, capsys):
    assert run("verify", "--out", tmp_path) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"]
    checks = {c["name"]: c for c in report["checks"]}
    assert checks["ais_log_z"]["measured"] <= 0.05
    assert "|delta log Z|" in checks["ais_log_z"]["detail"]
    assert all(c["passed"] for c in checks.values())
    assert json.loads((tmp_path / "verify.json").read_text()) == report


def test_verify_catches_corrupted_mobius_sign(monkeypatch, capsys):
    def corrupted(values, direction="down"):
        # drops the alternating (-1)^(|x|-|s|) sign, i.e. adds where it should subtract
        return lattice.fast_zeta_transform(values, direction)

    monkeypatch.setattr(lattice, "fast_mobius_transform", corrupted)
    assert run("verify") == 4
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    failed = {c["name"] for c in report["checks"] if not c["passed"]}
    assert "transform_roundtrip" in failed
    assert "FAIL transform_roundtrip" in captured.err


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hobm.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("hobm ")
