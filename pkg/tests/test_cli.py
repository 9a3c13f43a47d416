import json

import pytest

from certwatch.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_VALIDATION, main
from certwatch.report import read_report, validate_report

TINY = ["--counts", "train=40,val=4,test=12", "--width", "96", "--height", "54"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--seed", "3", "--out", str(root / "gen"), *TINY]) == EXIT_OK
    assert main(["train", "--data", str(root / "gen" / "data"), "--epochs", "5", "--out", str(root / "train"),
                 "--seed", "3"]) == EXIT_OK
    return root


def test_train_smoke_run(workspace):
    assert (workspace / "train" / "weights.vcd").stat().st_size > 0
    assert (workspace / "train" / "loss_curves.png").exists()
    rep = read_report(workspace / "train" / "train.json")
    validate_report(rep)
    assert rep["results"]["n_frames"] == 40
    assert rep["results"]["final_loss"] < rep["results"]["initial_loss"]


def test_gen_data_twice_gives_identical_digest(workspace, tmp_path):
    assert main(["gen-data", "--seed", "3", "--out", str(tmp_path), *TINY]) == EXIT_OK
    a = read_report(workspace / "gen" / "gen-data.json")["results"]["digest"]
    assert read_report(tmp_path / "gen-data.json")["results"]["digest"] == a


def _run(workspace, out, *extra):
    data, weights = str(workspace / "gen" / "data"), str(workspace / "train" / "weights.vcd")
    base = ["--data", data, "--weights", weights, "--out", str(out), "--T", "8"]
    return {
        "eval": main(["eval", *base, *extra]),
        "attack": main(["attack", *base, "--eps-grid", "0,0.0125", "--passes", "1", "--steps", "2", *extra]),
        "cert": main(["cert", *base, "--eps-grid", "0,0.0125", *extra]),
    }


def test_reports_are_byte_identical_across_runs(workspace, tmp_path):
    assert set(_run(workspace, tmp_path / "a").values()) == {EXIT_OK}
    assert set(_run(workspace, tmp_path / "b").values()) == {EXIT_OK}
    for name in ("eval.json", "attack.json", "attack.csv", "cert.json", "cert.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    for name in ("eval.json", "attack.json", "cert.json"):
        validate_report(read_report(tmp_path / "a" / name))
    assert (tmp_path / "a" / "attack_ratio.png").exists()
    cells = read_report(tmp_path / "a" / "attack.json")["results"]["cells"]
    assert all(c["ratio"] in (None, 1.0) for c in cells if c["eps"] == 0)


def test_report_command_collates_and_plots(workspace, tmp_path):
    _run(workspace, tmp_path / "r")
    inputs = [str(tmp_path / "r" / n) for n in ("eval.json", "attack.json", "cert.json")]
    assert main(["report", *inputs, "--out", str(tmp_path / "s")]) == EXIT_OK
    summary = read_report(tmp_path / "s" / "summary.json")
    assert len(summary["results"]["rows"]) == 1
    assert (tmp_path / "s" / "summary.csv").exists() and (tmp_path / "s" / "summary_attacks.png").exists()


def test_drift_runs_on_same_distribution(workspace, tmp_path):
    data = str(workspace / "gen" / "data")
    code = main(["drift", "--weights", str(workspace / "train" / "weights.vcd"), "--train-data", data,
                 "--field-data", data, "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert isinstance(read_report(tmp_path / "drift.json")["results"]["verdict"]["retrain"], bool)


def test_flag_overrides_config_file(workspace, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"T": 4, "u_max": 0.3}))
    base = ["--data", str(workspace / "gen" / "data"), "--weights", str(workspace / "train" / "weights.vcd")]
    assert main(["eval", *base, "--config", str(cfg), "--T", "6", "--out", str(tmp_path / "o")]) == EXIT_OK
    echoed = read_report(tmp_path / "o" / "eval.json")["config"]
    assert echoed["T"] == 6 and echoed["u_max"] == 0.3


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["bogus"],
        ["train", "--data", "x", "--out", "y", "--loss", "ce_combined", "--ibp", "one_sided"],
        ["train", "--out", "y"],
        ["gen-data", "--out", "y", "--style", "C"],
        ["gen-data", "--out", "y", "--counts", "train=0"],
    ],
)
def test_usage_errors(argv, tmp_path, capsys):
    argv = [a if a != "y" else str(tmp_path / "y") for a in argv]
    assert main(argv) == EXIT_USAGE
    assert capsys.readouterr().err


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochz": 3}))
    assert main(["train", "--data", "x", "--out", str(tmp_path), "--config", str(cfg)]) == EXIT_USAGE


def test_missing_inputs_are_runtime_errors(workspace, tmp_path):
    assert main(["train", "--data", str(tmp_path / "nodata"), "--out", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert main(["eval", "--data", str(workspace / "gen" / "data"), "--weights", str(tmp_path / "none.vcd"),
                 "--out", str(tmp_path / "o")]) == EXIT_RUNTIME


def test_corrupt_weights_are_validation_errors(workspace, tmp_path):
    bad = tmp_path / "w.vcd"
    bad.write_bytes(b"NOPE" + bytes(16))
    assert main(["eval", "--data", str(workspace / "gen" / "data"), "--weights", str(bad),
                 "--out", str(tmp_path / "o")]) == EXIT_VALIDATION
