import csv
import io
import json
import os
import re

import numpy as np
import pytest

from equibasis.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def test_partitions_order_4_prints_15_lines(capsys):
    code, out, _ = run_cli(capsys, "partitions", "--order", "4")
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 15
    assert lines[0] == "0000" and lines[-1] == "0123"


def test_partitions_json(capsys):
    code, out, _ = run_cli(capsys, "partitions", "--order", "3", "--format", "json")
    assert code == 0
    rows = json.loads(out)["rows"]
    assert len(rows) == 5
    assert rows[0]["blocks"] == [[0, 1, 2]]


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["partitions", "--order", "4", "--frobnicate"])
    assert exc.value.code == 2


def test_partitions_out_of_range_errors(capsys):
    code, _, err = run_cli(capsys, "partitions", "--order", "44")
    assert code == 2
    assert "order" in err


def test_basis_csv_dump(capsys):
    code, out, _ = run_cli(capsys, "basis", "--k", "2", "--n", "5", "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    linear = [r for r in rows if r["part"] == "linear"]
    bias = [r for r in rows if r["part"] == "bias"]
    assert len({r["rgs"] for r in linear}) == 15
    assert len({r["rgs"] for r in bias}) == 2
    assert len(linear) == 5**4  # one row per nonzero; classes partition the index set
    assert all(r["value"] == "1" for r in rows)


def test_basis_json_and_figure(tmp_path, capsys):
    outdir = tmp_path / "dump"
    code, _, _ = run_cli(
        capsys, "basis", "--k", "2", "--n", "4", "--format", "json", "--output", str(outdir)
    )
    assert code == 0
    data = json.loads((outdir / "basis.json").read_text())
    linear = [r for r in data["rows"] if r["part"] == "linear"]
    assert len(linear) == 15
    assert (outdir / "basis.png").exists()


def test_verify_trace_moment_single_point(capsys):
    code, out, _ = run_cli(capsys, "verify", "--suite", "trace-moment", "--n", "6", "--k", "4")
    assert code == 0
    line = json.loads(out.splitlines()[0])
    assert line["value"] == "15" and line["pass"] is True
    assert out.strip().endswith("0 failing checks")


def test_verify_all_small_grid(capsys):
    code, out, _ = run_cli(capsys, "verify", "--suite", "multiset")
    assert code == 0
    assert all(json.loads(l)["pass"] for l in out.splitlines()[:-1])


def test_fit_reports_residual(capsys):
    code, out, _ = run_cli(capsys, "fit", "--task", "diag_extraction", "--basis", "hartford", "--n", "8")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    residual = float([r for r in rows if r["term"] == "__residual__"][0]["coefficient"])
    assert residual > 0.05


def _experiment_args(outdir, seed="3"):
    return [
        "experiment", "--task", "trace", "--n", "6",
        "--train-size", "48", "--test-size", "16",
        "--depths", "1", "--epochs", "4", "--batch-size", "16",
        "--seed", seed, "--output", str(outdir),
    ]


def test_experiment_writes_artifacts(tmp_path, capsys):
    outdir = tmp_path / "exp"
    code, _, _ = run_cli(capsys, *_experiment_args(outdir))
    assert code == 0
    rows = list(csv.DictReader((outdir / "results.csv").open()))
    assert [r["task"] for r in rows] == ["trace"]
    expected_columns = [
        "schema_version", "task", "basis", "depth", "n", "n_train", "n_test",
        "loss", "baseline", "seed", "wall_time",
    ]
    assert list(rows[0].keys()) == expected_columns
    summary = json.loads((outdir / "summary.json").read_text())
    assert summary["schema_version"] == 1
    assert summary["config"]["epochs"] == 4  # the resolved config is logged
    assert (outdir / "training_curves.png").exists()
    assert (outdir / "test_losses.png").exists()


def test_experiment_deterministic_output(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli(capsys, *_experiment_args(out1))[0] == 0
    assert run_cli(capsys, *_experiment_args(out2))[0] == 0

    def strip_wall_time(path):
        rows = list(csv.DictReader(path.open()))
        for r in rows:
            r.pop("wall_time")
        return rows

    assert strip_wall_time(out1 / "results.csv") == strip_wall_time(out2 / "results.csv")


def test_config_file_defaults_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"order": 3, "format": "text"}))
    code, out, _ = run_cli(capsys, "partitions", "--order", "2", "--config", str(cfg))
    assert code == 0
    assert out.strip().splitlines() == ["00", "01"]  # explicit flag wins
    code, out, _ = run_cli(capsys, "partitions", "--config", str(cfg), "--order", "3")
    assert len(out.strip().splitlines()) == 5


def test_config_file_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"no_such_flag": 1}))
    code, _, err = run_cli(capsys, "partitions", "--order", "2", "--config", str(cfg))
    assert code == 2
    assert "no_such_flag" in err


def test_bench_zero_reps_usage_error(capsys):
    code, _, err = run_cli(capsys, "bench", "--n", "8", "--reps", "0")
    assert code == 2
    assert "reps" in err


def test_bench_small_n_reports_agreement(capsys):
    code, out, _ = run_cli(capsys, "bench", "--n", "8", "--d", "2", "--reps", "2")
    assert code == 0
    report = json.loads(out)
    assert report["max_output_difference"] < 1e-10
    assert report["median_fast_s"] > 0 and report["median_generic_s"] > 0
