import subprocess
import sys

import yaml

from graphfed.cli import main
from graphfed.experiments import CSV_COLUMNS, sample_features_path

SMALL = ["--preset", "fig1", "--set", "grid.d=[2]", "--set", "grid.n_train=[10]",
         "--set", "methods=[local]", "--set", "n_val=20", "--repeats", "1"]


def test_preset_prints_yaml(capsys):
    assert main(["preset", "fig3"]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["grid"]["n_rounds"] == [50]
    assert cfg["data"]["n_clusters"] == 1


def test_run_then_summarize(tmp_path, capsys):
    assert main(["run", *SMALL, "--out-dir", str(tmp_path), "--seed", "3"]) == 0
    results = tmp_path / "results.csv"
    lines = results.read_text().splitlines()
    assert lines[1] == ",".join(CSV_COLUMNS)
    assert len(lines) == 3
    assert yaml.safe_load((tmp_path / "provenance" / "config.yaml").read_text())["run"]["seed"] == 3
    capsys.readouterr()
    assert main(["summarize", str(results)]) == 0
    summary = tmp_path / "results_summary.csv"
    assert capsys.readouterr().out.strip() == str(summary)
    assert summary.read_text().startswith("experiment,cell_id,method")


def test_run_from_config_file_with_trace(tmp_path):
    cfg_path = tmp_path / "cfg.yaml"
    main_args = ["run", *SMALL, "--out-dir", str(tmp_path / "a")]
    assert main(main_args) == 0
    (tmp_path / "a" / "provenance" / "config.yaml").rename(cfg_path)
    text = cfg_path.read_text().replace("- local", "- graphfed")
    cfg_path.write_text(text)
    assert main(["run", "--config", str(cfg_path), "--out-dir", str(tmp_path / "b"), "--trace"]) == 0
    assert list((tmp_path / "b" / "traces").iterdir())


def test_error_rows_give_nonzero_exit(tmp_path):
    args = ["run", "--set", "kind=embedded", "--set", f"features_path={sample_features_path()}",
            "--set", "n_nodes=10", "--set", "n_components=10", "--set", "methods=[local]",
            "--set", "grid.n_train=[600]", "--repeats", "1", "--out-dir", str(tmp_path)]
    assert main(args) == 1
    assert "InsufficientData" in (tmp_path / "results.csv").read_text()


def test_bad_inputs_exit_nonzero(tmp_path, capsys):
    assert main(["run", "--set", "repeats=0", "--out-dir", str(tmp_path)]) == 2
    assert main(["run", "--set", "grid.p_in=[2.0]", "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("nonsense\n")
    assert main(["summarize", str(bad)]) == 2
    assert "line 1" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "graphfed", "preset", "mnist-like"],
                          capture_output=True, text=True, check=True)
    assert yaml.safe_load(proc.stdout)["grid"]["dirichlet_concentration"] == [0.3]
