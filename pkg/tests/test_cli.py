import csv
import io
import json
from pathlib import Path

import numpy as np
import pytest

from clic import cli
from clic.clcore import ConvergenceError

DATA = Path(__file__).parent / "data"
LONG = str(DATA / "long.csv")


def run(*argv):
    buf = io.StringIO()
    code = cli.main([str(a) for a in argv], buf)
    return code, buf.getvalue()


def test_fit_matches_golden_file(tmp_path):
    # regression guard: the stored fit was produced by this code on long.csv
    out = tmp_path / "fit.json"
    code, _ = run("fit", "--data", LONG, "--beta-cols", "0,1,2", "--scheme", "BCL", "--out", out)
    assert code == cli.EXIT_OK
    got = json.loads(out.read_text())
    want = json.loads((DATA / "golden_fit_bcl.json").read_text())
    assert np.allclose(got["theta_hat"], want["theta_hat"], rtol=0, atol=1e-8)
    assert got["logCL"] == pytest.approx(want["logCL"], abs=1e-8)
    assert got["param_names"] == want["param_names"]


def test_evaluate_round_trip():
    code, text = run(
        "fit", "--data", LONG, "--beta-cols", "0,1,2", "--scheme", "BCL", "--evaluate", DATA / "golden_fit_bcl.json"
    )
    assert code == 0
    assert abs(json.loads(text)["difference"]) < 1e-8


def test_outputs_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for path in (a, b):
        assert run("fit", "--data", LONG, "--family", "unstructured", "--beta-cols", "0,1", "--out", path)[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_fit_text_and_lmm():
    code, text = run("fit", "--data", LONG, "--beta-cols", "0,1")
    assert code == 0 and "tr(JH^-1)" in text
    code, text = run("fit", "--data", LONG, "--family", "lmm", "--beta-cols", "0,1", "--z-cols", "0", "--json")
    assert code == 0 and json.loads(text)["p"] == 4


def test_select_writes_table(tmp_path):
    out = tmp_path / "crit.csv"
    code, text = run(
        "select", "--data", LONG, "--candidate", "exchangeable:0,1,2", "--candidate", "unstructured:0,1,2", "--out", out
    )
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["model"] for r in rows] == ["exchangeable:0,1,2", "unstructured:0,1,2"]
    assert {"CLAIC", "CLBIC", "selected_CLAIC"} <= set(rows[0])


def test_qfprob():
    code, text = run("qfprob", "--lambdas", ",".join(["1"] * 8), "--threshold", 16)
    assert code == 0 and "0.042380" in text
    code, text = run("qfprob", "--lambdas", "1,1", "--threshold", 2, "--lower", "--json")
    assert json.loads(text)["prob"] == pytest.approx(1 - np.exp(-1))


def test_eigen_from_blocks_file(tmp_path):
    h1, h2 = np.eye(2), np.eye(3)
    j12 = np.eye(2, 3)
    path = tmp_path / "b.npz"
    np.savez(path, H1=h1, J11=h1, H2=h2, J22=h2, J12=j12, n=np.array(500))
    code, text = run("eigen", "--blocks", path)
    res = json.loads(text)
    assert code == 0
    assert np.allclose(res["eigenvalues"], [1.0])
    assert res["trace_B"] == pytest.approx(1.0)
    assert "selection_prob_smaller" in res


def test_eigen_from_preset_saves_blocks(tmp_path):
    path = tmp_path / "saved.npz"
    code, text = run("eigen", "--preset", "example2", "--scheme", "FULL", "--design-n", 200, "--save", path)
    assert code == 0
    assert np.allclose(json.loads(text)["eigenvalues"], 1.0, atol=1e-6)
    code, again = run("eigen", "--blocks", path)
    assert json.loads(again)["eigenvalues"] == json.loads(text)["eigenvalues"]


def test_simulate_outputs(tmp_path):
    cfg = tmp_path / "cfg" / "s.toml"
    code, text = run(
        "simulate", "--preset", "example2", "--param", "n=60", "--replicates", 3,
        "--out-dir", tmp_path, "--write-config", cfg,
    )
    assert code == 0
    summary = json.loads(text)
    assert summary["replicates"] == 3
    rep = tmp_path / "example2-Sigma1-n60-BCL_replicates.csv"
    header = rep.read_text().splitlines()[0]
    assert header.startswith("scenario,replicate,criterion,scheme,decision,penalty_")
    first = rep.read_bytes()
    code, again = run("simulate", "--config", cfg, "--out-dir", tmp_path)
    assert code == 0 and json.loads(again) == summary
    assert rep.read_bytes() == first


def test_jackknife_command(tmp_path):
    out, dels = tmp_path / "jk.csv", tmp_path / "del.csv"
    code, _ = run("jackknife", "--data", LONG, "--beta-cols", "0,1", "--out", out, "--deletions", dels)
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [r["parameter"] for r in rows] == ["beta0", "beta1", "C[1,1]", "kappa"]
    assert np.loadtxt(dels, delimiter=",", skiprows=1).shape == (80, 4)


def test_spruce_synthetic(tmp_path):
    code, _ = run("spruce", "--synthetic", 1, "--no-jackknife", "--out-dir", tmp_path)
    assert code == 0
    est = list(csv.DictReader((tmp_path / "spruce_estimates.csv").open()))
    assert est[0]["parameter"] == "beta0" and {"FULL", "TCL", "BCL"} <= set(est[0])
    crit = list(csv.DictReader((tmp_path / "spruce_criteria.csv").open()))
    assert crit[-1]["n_betas"] == "decision"


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fit"],
        ["qfprob", "--lambdas", "1,x", "--threshold", "2"],
        ["qfprob", "--lambdas", "1,1", "--threshold", "2", "--method", "mc", "--draws", "10"],
        ["select", "--data", LONG, "--candidate", "exchangeable:0"],
        ["simulate"],
        ["simulate", "--preset", "example2", "--param", "n"],
        ["fit", "--data", LONG, "--family", "lmm", "--beta-cols", "0"],
    ],
)
def test_usage_errors(argv, capsys):
    code, _ = run(*argv)
    assert code == cli.EXIT_USAGE


@pytest.mark.parametrize(
    "body,needle",
    [
        ("", "empty file"),
        ("subject,obs,y\n1,1,2.0\n", "line 1"),
        ("subject_id,obs_index,response\n1,1,2.0\n1,x,3.0\n", "line 3"),
        ("subject_id,obs_index,response\n1,1,2.0\n1,1,3.0\n", "duplicate"),
        ("subject_id,obs_index,response\n1,1,nan\n", "non-finite"),
        ("subject_id,obs_index,response\n1,1,2.0\n1,2,2.0\n2,1,1.0\n", "obs_index 1..2"),
    ],
)
def test_data_errors(tmp_path, capsys, body, needle):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    code, _ = run("fit", "--data", path)
    assert code == cli.EXIT_DATA
    assert needle in capsys.readouterr().err


def test_missing_file_is_a_data_error(tmp_path):
    assert run("fit", "--data", tmp_path / "nope.csv")[0] == cli.EXIT_DATA
    assert run("eigen", "--blocks", tmp_path / "nope.npz")[0] == cli.EXIT_DATA
    blocker = tmp_path / "file"
    blocker.write_text("")
    out = blocker / "x.json"
    assert run("fit", "--data", LONG, "--beta-cols", "0,1", "--out", out)[0] == cli.EXIT_DATA


def test_numerical_failure_exit_code(monkeypatch, capsys):
    def boom(*args, **kw):
        raise ConvergenceError("stalled", trace=[(-10.0, 1e-3), (-9.5, 5e-4)])

    monkeypatch.setattr(cli, "fit", boom)
    code, _ = run("fit", "--data", LONG)
    assert code == cli.EXIT_NUMERIC
    err = capsys.readouterr().err
    assert "numerical failure" in err and "iter 1" in err


def test_long_csv_round_trip(tmp_path):
    data = cli.load_long_csv(LONG)
    path = tmp_path / "copy.csv"
    cli.write_long_csv(path, data.y, data.x, data.subjects)
    back = cli.load_long_csv(path)
    assert np.array_equal(back.y, data.y) and np.array_equal(back.x, data.x)
    assert back.covariates == ["covariate_1", "covariate_2"]
