import json

import pytest

from dccm.cli import build_parser, main
from dccm.sim import read_trace

SUBCOMMANDS = ["gen-data", "train-dccm", "certify", "simulate", "eval-geodesic", "ref-diag"]


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def error_json(err):
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def scalar_ckpt(tmp_path_factory):
    d = tmp_path_factory.mktemp("scalar")
    assert main(["gen-data", "--model", "scalar2", "--state-step", "0.1", "--input-step", "0.5",
                 "--param-step", "1", "--out", str(d / "ds.bin")]) == 0
    assert main(["train-dccm", "--data", str(d / "ds.bin"), "--out", str(d / "net.ckpt"),
                 "--seed", "0"]) == 0
    return d


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_exits_zero(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        main([sub, "--help"])
    assert exc.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag_is_json_error(capsys):
    code, _, err = run(["gen-data", "--out", "x", "--bogus"], capsys)
    assert code == 2 and error_json(err)["error"] == "usage"


def test_missing_file(tmp_path, capsys):
    code, _, err = run(["train-dccm", "--data", str(tmp_path / "none.bin"), "--out", "x"], capsys)
    assert code != 0 and error_json(err)["error"] == "missing_file"


def test_generation_and_training_are_deterministic(tmp_path, scalar_ckpt):
    assert main(["gen-data", "--model", "scalar2", "--state-step", "0.1", "--input-step", "0.5",
                 "--param-step", "1", "--workers", "3", "--out", str(tmp_path / "ds.bin")]) == 0
    assert (tmp_path / "ds.bin").read_bytes() == (scalar_ckpt / "ds.bin").read_bytes()
    assert main(["train-dccm", "--data", str(tmp_path / "ds.bin"), "--out", str(tmp_path / "n.ckpt"),
                 "--seed", "0"]) == 0
    assert (tmp_path / "n.ckpt").read_bytes() == (scalar_ckpt / "net.ckpt").read_bytes()
    report = json.loads((tmp_path / "n.ckpt.json").read_text())
    assert report["training"]["converged"] and report["verification"]["fraction_pd"] == 1.0


def test_workers_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DCCM_WORKERS", "zero")
    code, _, err = run(["gen-data", "--model", "scalar2", "--out", str(tmp_path / "d.bin")], capsys)
    assert code == 2 and "DCCM_WORKERS" in error_json(err)["message"]


def test_certify_and_geodesic(tmp_path, scalar_ckpt, capsys):
    ckpt = str(scalar_ckpt / "net.ckpt")
    code, _, _ = run(["certify", "--ckpt", ckpt, "--model", "scalar2", "--grid", "0.01", "0.05", "0.1",
                      "--lambda", "0.1", "--out", str(tmp_path / "c.json")], capsys)
    assert code == 0
    assert json.loads((tmp_path / "c.json").read_text())["certified"] is True
    code, out, _ = run(["eval-geodesic", "--ckpt", ckpt, "--from", "1.0", "--to", "0.0"], capsys)
    path = json.loads(out)
    assert code == 0 and len(path["nodes"]) == 11 and path["length"] > 0


def test_simulate_dimension_mismatch(tmp_path, scalar_ckpt, capsys):
    (tmp_path / "run.json").write_text(json.dumps({"model": "cstr", "steps": 5}))
    code, _, err = run(["simulate", "--config", str(tmp_path / "run.json"),
                        "--ckpt", str(scalar_ckpt / "net.ckpt"), "--out", str(tmp_path / "t.csv")], capsys)
    assert code != 0 and error_json(err)["error"] == "schema"


def test_simulate_rejects_unknown_keys(tmp_path, scalar_ckpt, capsys):
    (tmp_path / "run.json").write_text(json.dumps({"model": "scalar2", "speed": 3}))
    code, _, err = run(["simulate", "--config", str(tmp_path / "run.json"),
                        "--ckpt", str(scalar_ckpt / "net.ckpt"), "--out", str(tmp_path / "t.csv")], capsys)
    assert code == 2 and "speed" in error_json(err)["message"]
    (tmp_path / "run.json").write_text(json.dumps({"estimator": {"lr": 1}}))
    code, _, err = run(["simulate", "--config", str(tmp_path / "run.json"),
                        "--ckpt", str(scalar_ckpt / "net.ckpt"), "--out", str(tmp_path / "t.csv")], capsys)
    assert code == 2


def test_ref_diag(capsys):
    code, out, _ = run(["ref-diag"], capsys)
    rep = json.loads(out)
    assert code == 0 and len(rep["rows"]) == 4
    assert {row["u_star_printed"] for row in rep["rows"]} == {0.05, 0.1, 0.0312, 0.0811}


def test_logs_resolved_config(tmp_path, capsys, caplog):
    caplog.set_level("INFO", logger="dccm")
    code, _, _ = run(["ref-diag", "--out", str(tmp_path / "r.json")], capsys)
    assert code == 0 and "ref-diag resolved config" in caplog.text


@pytest.mark.slow
def test_cstr_pipeline_end_to_end(tmp_path, capsys):
    ds, ckpt, trace = tmp_path / "ds.bin", tmp_path / "n.ckpt", tmp_path / "t.csv"
    assert main(["gen-data", "--model", "cstr", "--state-step", "0.1", "--input-step", "0.2",
                 "--param-step", "0.5", "--out", str(ds), "--csv", str(tmp_path / "ds.csv")]) == 0
    assert main(["train-dccm", "--data", str(ds), "--out", str(ckpt)]) == 0
    (tmp_path / "run.json").write_text(json.dumps({"r_star": [3.0], "learning_enabled": True,
                                                   "learning_start_step": 10}))
    assert main(["simulate", "--config", str(tmp_path / "run.json"), "--ckpt", str(ckpt),
                 "--out", str(trace)]) == 0
    t = read_trace(trace, 2, 1, 1)
    assert len(t) == 100 and 0.9 <= t.r_hat[-1][0] <= 1.1


def test_parser_lists_all_subcommands():
    text = build_parser().format_help()
    for sub in SUBCOMMANDS:
        assert sub in text
