# tests/test_cli.py
import csv
import json
import math

import numpy as np
import pytest

import fishergrad.cli as cli
from fishergrad.errors import DomainError
from fishergrad.ledger import recent_runs
from fishergrad.main import main


@pytest.fixture(autouse=True)
def no_dotenv(monkeypatch):
    monkeypatch.setattr("fishergrad.main.load_dotenv", lambda *a, **k: False)


def run(*argv, ledger=False):
    args = list(argv) if ledger else ["--no-ledger", *argv]
    return main(args)


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


# ----------------------------
# sample
# ----------------------------
def test_sample_exact_reference_urn(tmp_path):
    out = tmp_path / "s.csv"
    code = run("sample", "--m", "200,200,200", "--n", "180", "--omega", "1,5,1",
               "--mode", "exact", "--count", "1000", "--seed", "7", "--out", str(out))
    assert code == 0
    rows = read_csv(out)
    assert len(rows) == 1000
    assert list(rows[0]) == ["draw_index", "x_1", "x_2", "x_3"]
    assert all(int(r["x_1"]) + int(r["x_2"]) + int(r["x_3"]) == 180 for r in rows)
    echo = json.loads((tmp_path / "s.config.json").read_text())
    assert echo["seed"] == 7 and echo["count"] == 1000 and echo["mode"] == "exact"
    assert echo["urn"]["class_counts"] == [200, 200, 200]


def test_sample_is_byte_identical_across_runs(tmp_path):
    paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
    for p in paths:
        assert run("sample", "--m", "20,30,10", "--n", "25", "--omega", "1,2,0.5",
                   "--count", "200", "--seed", "3", "--out", str(p)) == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_sample_differentiable_has_soft_columns(tmp_path):
    out = tmp_path / "d.csv"
    assert run("sample", "--m", "5,5", "--n", "4", "--tau", "0.5", "--count", "10", "--out", str(out)) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["draw_index", "x_1", "x_2", "soft_1", "soft_2"]
    assert all(abs(float(r["soft_1"]) - int(r["x_1"])) < 5 for r in rows)


def test_sample_zero_count_writes_header_only(tmp_path):
    out = tmp_path / "z.csv"
    assert run("sample", "--m", "3,3", "--n", "2", "--count", "0", "--mode", "exact", "--out", str(out)) == 0
    assert out.read_text() == "draw_index,x_1,x_2\n"


def test_sample_json_format(tmp_path):
    out = tmp_path / "s.json"
    assert run("sample", "--m", "3,3", "--n", "2", "--count", "3", "--mode", "exact",
               "--format", "json", "--out", str(out)) == 0
    records = json.loads(out.read_text())
    assert [r["draw_index"] for r in records] == [0, 1, 2]


@pytest.mark.parametrize(
    "argv",
    [
        ["--m", "a,b", "--n", "2"],
        ["--m", "3,3", "--n", "7"],
        ["--m", "3,3", "--n", "2", "--omega", "1,-1"],
        ["--m", "3,3", "--n", "2", "--omega", "1,2,3"],
        ["--m", "3,3", "--n", "2", "--tau", "0"],
        ["--m", "3,3", "--n", "2", "--count", "-5"],
        ["--m", "3,3", "--n", "2", "--seed", "-1"],
    ],
)
def test_sample_config_errors(tmp_path, argv, capsys):
    out = tmp_path / "bad.csv"
    assert run("sample", *argv, "--out", str(out)) == 2
    assert not out.exists()
    assert "error:" in capsys.readouterr().err


def test_default_seed_and_out_dir_come_from_env(tmp_path, monkeypatch):
    monkeypatch.setenv("FGRAD_SEED", "11")
    monkeypatch.setenv("FGRAD_OUT_DIR", str(tmp_path / "env_runs"))
    assert run("sample", "--m", "3,3", "--n", "2", "--count", "2") == 0
    echo = json.loads((tmp_path / "env_runs" / "sample.config.json").read_text())
    assert echo["seed"] == 11
    assert echo["settings"]["out_dir"] == str(tmp_path / "env_runs")


# ----------------------------
# pmf
# ----------------------------
def _pmf(tmp_path, m, n, omega=None):
    out = tmp_path / "pmf.csv"
    argv = ["pmf", "--m", m, "--n", str(n), "--out", str(out)]
    if omega:
        argv += ["--omega", omega]
    assert run(*argv) == 0
    rows = read_csv(out)
    joint = np.array([float(r["log_p_joint"]) for r in rows])
    chain = np.array([float(r["log_p_chain"]) for r in rows])
    return rows, joint, chain


def test_pmf_small_urn(tmp_path):
    rows, joint, chain = _pmf(tmp_path, "3,5,4", 5, "1,2,4")
    assert len(rows) == 33
    assert abs(math.fsum(np.exp(joint)) - 1) <= 1e-10
    assert abs(math.fsum(np.exp(chain)) - 1) <= 1e-10
    assert np.max(np.abs(joint - chain)) > 1e-6


def test_pmf_two_class_and_uniform_columns_agree(tmp_path):
    _, joint, chain = _pmf(tmp_path, "4,6", 5, "3,0.5")
    np.testing.assert_allclose(joint, chain, atol=1e-12)
    _, joint, chain = _pmf(tmp_path, "3,5,4", 5)
    np.testing.assert_allclose(joint, chain, atol=1e-12)


def test_pmf_capacity_error(tmp_path):
    out = tmp_path / "big.csv"
    assert run("pmf", "--m", "1000,1000,1000", "--n", "10", "--out", str(out)) == 3
    assert not out.exists()


# ----------------------------
# kstest
# ----------------------------
KS_SMOKE = ["kstest", "--sweep", "omega2", "--values", "2", "--m", "10,10,10", "--n", "9", "--samples", "300"]


def test_kstest_single_point(tmp_path):
    out = tmp_path / "ks.csv"
    assert run(*KS_SMOKE, "--out", str(out)) == 0
    rows = read_csv(out)
    assert [r["class"] for r in rows] == ["1", "2", "3"]
    assert list(rows[0]) == ["sweep_param", "sweep_value", "class", "D", "p_raw", "p_adjusted", "n_samples", "seed"]
    hist = read_csv(tmp_path / "ks.hist.csv")
    assert list(hist[0]) == ["sweep_param", "sweep_value", "arm", "class", "count_value", "frequency"]
    assert {h["arm"] for h in hist} == {"differentiable", "exact"}
    echo = json.loads((tmp_path / "ks.config.json").read_text())
    assert echo["sweep"]["samples"] == 300 and echo["threshold"] == 0.05


def test_kstest_assert(tmp_path):
    out = tmp_path / "ks.csv"
    assert run(*KS_SMOKE, "--assert", "--threshold", "0.99", "--out", str(out)) == 1
    assert out.exists()
    assert run(*KS_SMOKE, "--assert", "--threshold", "0.99", "--allow-failures", "3", "--out", str(out)) == 0


def test_kstest_rejects_bad_sweep_values(tmp_path):
    assert run("kstest", "--sweep", "n", "--values", "900", "--out", str(tmp_path / "k.csv")) == 2
    assert run(*KS_SMOKE, "--threshold", "1.5", "--out", str(tmp_path / "k.csv")) == 2


# ----------------------------
# fit
# ----------------------------
FIT_SMALL = ["fit", "--m", "10,10,10", "--n", "9", "--train", "40", "--val", "10", "--batch-size", "8"]


def test_fit_generated(tmp_path):
    out = tmp_path / "trace.csv"
    assert run(*FIT_SMALL, "--omega-gt", "1,3,1", "--epochs", "2", "--out", str(out)) == 0
    rows = read_csv(out)
    assert list(rows[0]) == ["step", "epoch", "train_loss", "val_loss", "tau", "log_omega_1", "log_omega_2", "log_omega_3"]
    assert len(rows) == 1 + 2 * 5
    summary = json.loads((tmp_path / "trace.summary.json").read_text())
    assert len(summary["final_log_omega"]) == 3
    assert sum(summary["expected_counts"]) == pytest.approx(9.0)
    assert summary["omega_gt"] == pytest.approx([1.0, 3.0, 1.0])
    assert "reference_val_loss" in summary


def test_fit_zero_epochs(tmp_path):
    out = tmp_path / "trace.csv"
    assert run(*FIT_SMALL, "--omega-gt", "1,3,1", "--epochs", "0", "--out", str(out)) == 0
    assert len(read_csv(out)) == 1


def test_fit_omega2_grid(tmp_path):
    out = tmp_path / "grid.csv"
    assert run(*FIT_SMALL, "--omega-gt", "1,1,1", "--omega2-grid", "1,2", "--epochs", "1", "--out", str(out)) == 0
    summary = json.loads((tmp_path / "grid.summary.json").read_text())
    assert [s["omega2_gt"] for s in summary] == [1.0, 2.0]
    assert (tmp_path / "grid.omega2_1.csv").exists() and (tmp_path / "grid.omega2_2.csv").exists()


def test_fit_omega2_grid_writes_nothing_when_a_later_fit_fails(tmp_path, monkeypatch):
    real = cli.fit_omega
    calls = []

    def fail_second(*args, **kwargs):
        calls.append(1)
        if len(calls) == 2:
            raise DomainError("log weights diverged")
        return real(*args, **kwargs)

    monkeypatch.setattr(cli, "fit_omega", fail_second)
    out = tmp_path / "grid.csv"
    assert run(*FIT_SMALL, "--omega-gt", "1,1,1", "--omega2-grid", "1,2", "--epochs", "1", "--out", str(out)) == 2
    assert len(calls) == 2
    assert list(tmp_path.glob("grid*")) == []


def test_fit_from_sample_output(tmp_path):
    data = tmp_path / "draws.csv"
    assert run("sample", "--m", "10,10,10", "--n", "9", "--omega", "1,3,1", "--mode", "exact",
               "--count", "50", "--out", str(data)) == 0
    out = tmp_path / "trace.csv"
    assert run("fit", "--m", "10,10,10", "--data", str(data), "--train", "40", "--val", "10",
               "--epochs", "1", "--out", str(out)) == 0
    summary = json.loads((tmp_path / "trace.summary.json").read_text())
    assert "omega_gt" not in summary


@pytest.mark.parametrize(
    "extra",
    [
        [],
        ["--omega-gt", "1,3,1", "--data", "x.csv"],
        ["--omega2-grid", "1,2", "--data", "x.csv"],
        ["--omega-gt", "1,3,1", "--lr", "-1"],
        ["--omega-gt", "1,3,1", "--init-log-omega", "0,0"],
        ["--omega-gt", "1,3"],
        ["--omega-gt", "1,3,1", "--format", "json"],
    ],
)
def test_fit_config_errors(tmp_path, extra):
    assert run(*FIT_SMALL, *extra, "--out", str(tmp_path / "t.csv")) == 2
    assert not (tmp_path / "t.csv").exists()


def test_fit_missing_data_file(tmp_path):
    assert run("fit", "--m", "3,3", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "t.csv")) == 2


# ----------------------------
# oracle-check
# ----------------------------
def test_oracle_check_passes(capsys, tmp_path):
    report = tmp_path / "oracle.json"
    assert run("oracle-check", "--random-urns", "3", "--out", str(report)) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "m=[3, 5, 4]" in out
    assert all(c["passed"] for c in json.loads(report.read_text()))


def test_oracle_check_csv_report(tmp_path):
    report = tmp_path / "oracle.csv"
    assert run("oracle-check", "--random-urns", "0", "--format", "csv", "--out", str(report)) == 0
    rows = read_csv(report)
    assert list(rows[0]) == ["name", "passed", "detail"]
    assert {r["passed"] for r in rows} == {"1"}


def test_oracle_check_negative_control(capsys):
    assert run("oracle-check", "--random-urns", "0", "--tolerance", "-1") == 1
    assert "FAIL" in capsys.readouterr().out


# ----------------------------
# ledger
# ----------------------------
def test_runs_are_recorded(tmp_path):
    db = tmp_path / "runs" / "ledger.db"
    assert run("sample", "--m", "3,3", "--n", "2", "--count", "1", "--out", str(tmp_path / "l.csv"), ledger=True) == 0
    assert run("sample", "--m", "3,3", "--n", "9", "--out", str(tmp_path / "x.csv"), ledger=True) == 2
    runs = recent_runs(path=db)
    assert [r["exit_code"] for r in runs] == [2, 0]
    assert runs[1]["subcommand"] == "sample"
    assert json.loads(runs[1]["config_json"])["count"] == 1


def test_no_ledger_flag(tmp_path):
    assert run("sample", "--m", "3,3", "--n", "2", "--count", "1", "--out", str(tmp_path / "l.csv")) == 0
    assert not (tmp_path / "runs" / "ledger.db").exists()
