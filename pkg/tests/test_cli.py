import json
import subprocess
import sys

import numpy as np
import pytest

from fwda.cli import main
from fwda.data_io import LabeledDataset, SyntheticSpec, generate_synthetic, load_features, save_csv


@pytest.fixture
def train_csv(tmp_path):
    path = tmp_path / "train.csv"
    save_csv(generate_synthetic(SyntheticSpec(5, 30, 2.0, seed=1)).data, path)
    return path


def _json_line(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    assert len(out) == 1
    return json.loads(out[0])


def _fit(tmp_path, train_csv, name="model.json", extra=()):
    out = tmp_path / name
    code = main(["--quiet", "fit", "--input", str(train_csv), "--label-column", "label", "--lambda", "1.0",
                 "--samples", "200", "--seed", "42", "--out", str(out), *extra])
    return code, out


def test_fit_happy_path(tmp_path, train_csv, capsys):
    code, out = _fit(tmp_path, train_csv)
    assert code == 0 and out.exists()
    info = _json_line(capsys)
    assert (info["n"], info["p"], info["dof"], info["dof_requested"]) == (60, 5, 59, 59)
    assert info["kkt_residual"] <= 1e-4


def test_fit_missing_input_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["fit", "--out", "x.json"])
    assert err.value.code == 2


def test_usage_error_exit_code_from_process():
    proc = subprocess.run([sys.executable, "-m", "fwda", "fit"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr


def test_fit_single_class(tmp_path, capsys):
    path = tmp_path / "one.csv"
    save_csv(LabeledDataset(np.random.default_rng(0).standard_normal((5, 2)), [1] * 5), path)
    assert main(["fit", "--input", str(path), "--out", str(tmp_path / "m.json")]) == 1
    assert "MissingClass" in capsys.readouterr().err


def test_predict_arity_and_determinism(tmp_path, train_csv, capsys):
    _, model = _fit(tmp_path, train_csv)
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["predict", "--model", str(model), "--input", str(train_csv), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    lines = outs[0].decode().splitlines()
    assert lines[0] == "row_index,score,label"
    assert len(lines) == 61
    assert all(line.split(",")[2] in ("1", "-1") for line in lines[1:])


def test_predict_dimension_mismatch(tmp_path, train_csv, capsys):
    _, model = _fit(tmp_path, train_csv)
    bad = tmp_path / "bad.csv"
    save_csv(LabeledDataset(np.ones((3, 4)), [1, -1, 1]), bad)
    capsys.readouterr()
    assert main(["predict", "--model", str(model), "--input", str(bad)]) == 1
    err = capsys.readouterr().err
    assert "5" in err and "4" in err


def test_predict_missing_model(tmp_path, train_csv):
    assert main(["predict", "--model", str(tmp_path / "none.json"), "--input", str(train_csv)]) == 1


def test_synth(tmp_path, capsys):
    paths = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        assert main(["--quiet", "synth", "--dim", "4", "--n-per-class", "25", "--seed", "3", "--out", str(out)]) == 0
        paths.append(out)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert load_features(paths[0], "label").shape == (50, 4)
    truth = json.loads((tmp_path / "a.csv.truth.json").read_text())
    np.linalg.cholesky(np.array(truth["true_precision"]))
    assert 0.5 < truth["bayes_accuracy"] < 1.0


def test_eval_smoke(tmp_path, capsys):
    config = {"train_sizes": [10, 20], "test_per_class": 30, "methods": ["fwda", "lda_pinv"],
              "repeats": 2, "dim": 20, "ensemble_size": 50, "master_seed": 5}
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(config))
    outs = []
    for tag in ("a", "b"):
        args = ["--quiet", "eval", "--config", str(cfg), "--out-json", str(tmp_path / f"{tag}.json"),
                "--out-csv", str(tmp_path / f"{tag}.csv")]
        assert main(args) == 0
        outs.append(_json_line(capsys))
    assert outs[0]["rows"] == 2 * 2 * 2
    assert outs[0]["summary"] == outs[1]["summary"]
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert outs[0]["seconds"] < 60


def test_eval_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nonsense": 1}))
    assert main(["eval", "--config", str(cfg)]) == 1


def test_converge_small_grid(tmp_path, capsys):
    out = tmp_path / "conv.json"
    args = ["--quiet", "converge", "--dim", "3", "--m-grid", "10,40,160", "--seeds", "4", "--points", "10",
            "--out", str(out)]
    assert main(args) == 0
    line = _json_line(capsys)
    assert line["m_grid"] == [10, 40, 160]
    assert line["reference_m"] == 3200
    assert json.loads(out.read_text())["fitted_slope"] == line["fitted_slope"]


def test_converge_with_model(tmp_path, train_csv, capsys):
    _, model = _fit(tmp_path, train_csv)
    capsys.readouterr()
    args = ["--quiet", "converge", "--model", str(model), "--input", str(train_csv), "--m-grid", "10,20",
            "--seeds", "2", "--points", "5"]
    assert main(args) == 0
    assert main(["converge", "--model", str(model)]) == 1


def test_bench_output_parses(capsys):
    assert main(["--quiet", "bench", "--dim", "10", "--points", "40", "--samples", "50"]) == 0
    captured = capsys.readouterr()
    assert captured.err == ""
    result = json.loads(captured.out)
    assert result["n_points"] == 40
    assert result["ratio"] > 0


def test_bench_table_on_stderr(capsys):
    assert main(["bench", "--dim", "5", "--points", "10", "--samples", "20"]) == 0
    captured = capsys.readouterr()
    assert "lazy" in captured.err and "adaptive" in captured.err
    json.loads(captured.out)


def test_threads_env_keeps_output(tmp_path, train_csv, monkeypatch):
    _, model = _fit(tmp_path, train_csv)
    outs = []
    for threads in ("0", "4"):
        monkeypatch.setenv("FWDA_THREADS", threads)
        out = tmp_path / f"p{threads}.csv"
        assert main(["predict", "--model", str(model), "--input", str(train_csv), "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
