import csv
import json

import numpy as np
import pytest

from corecov import cli, matops, simulate
from corecov.kcd import SquareRootKind

from conftest import rand_spd


def write_data_csv(path, data):
    rows = [",".join(repr(float(x)) for x in matops.vec(y)) for y in data]
    path.write_text("\n".join(rows) + "\n")


def test_simulate_writes_outputs(tmp_path):
    out = tmp_path / "exp"
    rc = cli.main([
        "simulate", "--model", "m1", "--p1", "2", "--p2", "2", "--rank", "3",
        "--lambda", "0.3", "--n", "8", "--reps", "1", "--seed", "3",
        "--sqrt", "sym", "--out", str(out),
    ])
    assert rc == 0
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert {r["estimator"] for r in rows} == {"kmle", "base-sym", "picse-sym"}
    for r in rows:
        assert r["failed"] == "0"
        assert float(r["metric_sigma"]) >= 0.0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["model"] == "m1"
    assert len(summary["cells"]) == 3


def test_simulate_determinism(tmp_path):
    args = [
        "simulate", "--model", "m2", "--p1", "2", "--p2", "2", "--rank", "3",
        "--lambda", "0.4", "--n", "8", "--reps", "2", "--seed", "11",
        "--sqrt", "both",
    ]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(args + ["--out", str(out1)]) == 0
    assert cli.main(args + ["--out", str(out2)]) == 0
    assert (out1 / "results.csv").read_bytes() == (out2 / "results.csv").read_bytes()


def test_fit_round_trip(tmp_path):
    dims = matops.Dims(3, 2, 3)
    truth = simulate.gen_truth("m1", dims, 0.4, seed=21)
    data = simulate.gen_data(truth.sigma, 30, seed=22, dims=dims)
    src = tmp_path / "data.csv"
    write_data_csv(src, data)
    out = tmp_path / "fit.json"
    rc = cli.main([
        "fit", "--input", str(src), "--p1", "3", "--p2", "2", "--rank", "3",
        "--sqrt", "sym", "--out", str(out),
    ])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert 0.0 < payload["lambda"] < 1.0
    assert payload["nu"] > 0.0
    sigma_hat = np.array(payload["sigma_hat"])
    assert sigma_hat.shape == (6, 6)
    assert np.linalg.eigvalsh(sigma_hat).min() > 0
    assert payload["trace"]["termination"] in ("converged", "max_iter")
    objs = payload["trace"]["objectives"]
    assert all(b <= a + 1e-9 * abs(a) for a, b in zip(objs, objs[1:]))


def test_fit_rejects_bad_width(tmp_path):
    src = tmp_path / "data.csv"
    src.write_text("1.0,2.0\n3.0,4.0\n")
    rc = cli.main([
        "fit", "--input", str(src), "--p1", "3", "--p2", "2", "--rank", "3",
        "--out", str(tmp_path / "o.json"),
    ])
    assert rc == 2


def test_kcd_command(tmp_path):
    rng = np.random.default_rng(31)
    sigma = rand_spd(6, rng)
    src = tmp_path / "sigma.csv"
    np.savetxt(src, sigma, delimiter=",")
    out = tmp_path / "kcd.json"
    rc = cli.main([
        "kcd", "--input", str(src), "--p1", "3", "--p2", "2", "--sqrt", "chol",
        "--out", str(out),
    ])
    assert rc == 0
    payload = json.loads(out.read_text())
    k1 = np.array(payload["k1"])
    k2 = np.array(payload["k2"])
    c = np.array(payload["c"])
    from corecov.kcd import SeparableCovariance

    h = SeparableCovariance(k1=k1, k2=k2).h_matrix(SquareRootKind.CHOLESKY)
    assert np.abs(h @ c @ h.T - sigma).max() < 1e-8


def test_kcd_numerical_failure_exit_code(tmp_path):
    f = np.zeros((4, 3))
    f[0, 0] = f[2, 1] = f[3, 2] = 1.0
    src = tmp_path / "gram.csv"
    np.savetxt(src, f @ f.T, delimiter=",")
    rc = cli.main([
        "kcd", "--input", str(src), "--p1", "2", "--p2", "2",
        "--out", str(tmp_path / "o.json"),
    ])
    assert rc == 3


def test_invalid_config_exit_code(tmp_path):
    rc = cli.main([
        "simulate", "--model", "m1", "--p1", "2", "--p2", "2", "--rank", "2",
        "--lambda", "0.3", "--n", "8", "--reps", "1", "--seed", "3",
        "--out", str(tmp_path / "x"),
    ])
    assert rc == 2  # rank 2 violates the rank regime at (2, 2)


def test_argparse_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        cli.main(["simulate", "--model", "bogus"])
    assert exc.value.code == 2
