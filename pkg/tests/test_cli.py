# tests/test_cli.py
import json

import numpy as np
import pytest

from app import cli
from app.core.errors import EXIT_CONFIG, EXIT_IO, ConfigError
from app.models.responses import EvaluationSummary
from app.utils.artifact_utils import read_columns, read_header


@pytest.fixture
def csv_dataset(tmp_path):
    """Regresión sintética de 40 filas y 3 características"""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(40, 3))
    y = np.sin(x[:, 0]) + 0.5 * x[:, 1] + 0.1 * rng.normal(size=40)
    path = tmp_path / "data.csv"
    np.savetxt(path, np.column_stack([x, y]), delimiter=",")
    return str(path)


def _train_args(dataset, out_dir, *extra):
    return ["train", "--dataset", dataset, "--out-dir", str(out_dir), "--steps", "4", "--inducing", "5",
            "--layers", "2", "--samples-train", "2", "--samples-eval", "4", "--seed", "3", *extra]


def test_config_file_overridden_by_flags(tmp_path):
    """Los flags explícitos tienen prioridad sobre el JSON"""
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({"seed": 3, "steps": 7, "kernel": "linear"}), encoding="utf-8")
    args = cli.build_parser().parse_args(["train", "--config", str(config_path), "--seed", "5"])
    config = cli.load_config(args)
    assert config.seed == 5
    assert config.steps == 7
    assert config.kernel.value == "linear"
    assert config.layers == 3


def test_invalid_configuration_errors(tmp_path):
    parser = cli.build_parser()
    with pytest.raises(ConfigError):
        cli.load_config(parser.parse_args(["train", "--kernel", "bogus"]))
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"learning_rate": 0.1}), encoding="utf-8")
    with pytest.raises(ConfigError):
        cli.load_config(parser.parse_args(["train", "--config", str(unknown)]))
    with pytest.raises(ConfigError):
        cli.load_config(parser.parse_args(["train", "--config", str(tmp_path / "missing.json")]))


def test_main_exit_codes(tmp_path, csv_dataset):
    """2 para configuración, 4 para E/S"""
    assert cli.main(["train", "--kernel", "bogus"]) == EXIT_CONFIG
    assert cli.main(["train", "--out-dir", str(tmp_path / "run")]) == EXIT_CONFIG
    assert cli.main(["evaluate", "--dataset", csv_dataset, "--out-dir", str(tmp_path / "empty")]) == EXIT_IO
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2,3\n4,5\n6,7,8,9\n", encoding="utf-8")
    assert cli.main(["train", "--dataset", str(ragged), "--out-dir", str(tmp_path / "bad")]) == EXIT_IO


def test_train_writes_artifacts(tmp_path, csv_dataset, capsys):
    """train escribe checkpoint, métricas, split y resumen, todos con cabecera"""
    out_dir = tmp_path / "run"
    assert cli.main(_train_args(csv_dataset, out_dir)) == 0
    printed = EvaluationSummary.model_validate_json(capsys.readouterr().out)
    assert printed.test_points == 4 and printed.train_points == 36

    for name in ("checkpoint.json", "metrics.jsonl", "split.json", "summary.json"):
        header = read_header(out_dir / name)
        assert header.command == "train"
        assert header.seed == 3
    lines = (out_dir / "metrics.jsonl").read_text(encoding="utf-8").splitlines()
    assert [json.loads(line)["step"] for line in lines[1:]] == [1, 2, 3, 4]
    summary = json.loads((out_dir / "summary.json").read_text(encoding="utf-8"))
    assert np.isfinite(summary["test_loglik"])
    assert summary["test_rmse"] > 0


def test_train_is_reproducible_across_directories(tmp_path, csv_dataset):
    """Misma configuración y semilla: métricas idénticas byte a byte"""
    cli.run(_train_args(csv_dataset, tmp_path / "a"))
    cli.run(_train_args(csv_dataset, tmp_path / "b"))
    first = (tmp_path / "a" / "metrics.jsonl").read_bytes()
    second = (tmp_path / "b" / "metrics.jsonl").read_bytes()
    assert first == second


def test_evaluate_reproduces_training_summary(tmp_path, csv_dataset):
    out_dir = tmp_path / "run"
    trained = cli.run(_train_args(csv_dataset, out_dir))
    evaluated = cli.run(["evaluate", *_train_args(csv_dataset, out_dir)[1:]])
    assert evaluated == trained
    assert read_header(out_dir / "evaluation.json").command == "evaluate"


class Interrupted(Exception):
    pass


def test_resume_after_interruption_matches_full_run(tmp_path, csv_dataset, monkeypatch):
    """Interrumpir tras el checkpoint del paso 2 y reanudar da las mismas métricas"""
    cli.run(_train_args(csv_dataset, tmp_path / "full", "--checkpoint-every", "2"))

    real_train = cli.train

    def interrupted_train(*args, **kwargs):
        write = kwargs["on_step"]

        def on_step(record):
            if record.step == 3:
                raise Interrupted()
            write(record)

        kwargs["on_step"] = on_step
        return real_train(*args, **kwargs)

    monkeypatch.setattr(cli, "train", interrupted_train)
    with pytest.raises(Interrupted):
        cli.run(_train_args(csv_dataset, tmp_path / "resumed", "--checkpoint-every", "2"))
    monkeypatch.undo()

    cli.run(_train_args(csv_dataset, tmp_path / "resumed", "--checkpoint-every", "2", "--resume"))
    full = (tmp_path / "full" / "metrics.jsonl").read_bytes()
    resumed = (tmp_path / "resumed" / "metrics.jsonl").read_bytes()
    assert resumed == full


def test_sample_prior_files(tmp_path):
    """Un fichero G/K por capa y panel, más las funciones muestreadas"""
    written = cli.run(["sample-prior", "--out-dir", str(tmp_path), "--grid-points", "10", "--panels", "2",
                       "--functions-per-panel", "2", "--prior-layers", "2", "--kernel", "squared_exponential",
                       "--seed", "1"])
    assert len(written) == 3 * 5
    prior_dir = tmp_path / "prior"
    assert (prior_dir / "gp_G2.txt").exists()
    assert (prior_dir / "panel2_K1.txt").exists()
    functions = read_columns(prior_dir / "panel1_functions.csv")
    assert list(functions.columns) == ["x", "f0", "f1"]
    assert len(functions) == 10
    assert read_header(prior_dir / "panel1_G1.txt").command == "sample-prior"


def test_sample_posterior_files(tmp_path):
    """Paneles del posterior de un checkpoint 1D, con la misma cabecera que los del prior"""
    rng = np.random.default_rng(1)
    x = rng.uniform(-3, 3, size=30)
    dataset = tmp_path / "curve.csv"
    np.savetxt(dataset, np.column_stack([x, np.sin(x) + 0.1 * rng.normal(size=30)]), delimiter=",")
    run_dir = tmp_path / "run"
    cli.run(_train_args(str(dataset), run_dir))

    written = cli.run(["sample-posterior", "--out-dir", str(run_dir), "--grid-points", "8", "--panels", "2",
                       "--functions-per-panel", "2", "--seed", "5"])
    assert len(written) == 2 * 5
    posterior_dir = run_dir / "posterior"
    assert (posterior_dir / "posterior2_G2.txt").exists()
    assert (posterior_dir / "posterior1_K1.txt").exists()
    functions = read_columns(posterior_dir / "posterior1_functions.csv")
    assert list(functions.columns) == ["x", "f0", "f1"]
    assert len(functions) == 8
    assert np.all(np.isfinite(functions[["f0", "f1"]].to_numpy()))
    header = read_header(posterior_dir / "posterior1_G1.txt")
    assert header.command == "sample-posterior"
    assert header.seed == 5


def test_sample_posterior_requires_one_feature(tmp_path, csv_dataset):
    run_dir = tmp_path / "run"
    cli.run(_train_args(csv_dataset, run_dir))
    assert cli.main(["sample-posterior", "--out-dir", str(run_dir)]) == EXIT_CONFIG


def test_eigen_hist_files(tmp_path):
    written = cli.run(["eigen-hist", "--out-dir", str(tmp_path), "--distribution", "resw", "--size", "10",
                       "--draws", "2", "--alpha", "0.5"])
    assert [p.name for p in written] == ["resw_eigenvalues.csv", "resw_histogram.csv"]
    eigenvalues = read_columns(written[0])
    assert len(eigenvalues) == 20
    assert read_columns(written[1])["count"].sum() == 20


def test_complexity_probe_files(tmp_path):
    path = cli.run(["complexity-probe", "--out-dir", str(tmp_path), "--probe-inducing", "2", "3",
                    "--probe-points", "4", "6", "--probe-repeats", "1", "--layers", "2"])
    report = json.loads(path.read_text(encoding="utf-8"))
    assert len(report["rows"]) == 3
    timings = read_columns(tmp_path / "complexity_timings.csv")
    assert list(timings.columns) == ["inducing", "points", "seconds", "peak_bytes"]
