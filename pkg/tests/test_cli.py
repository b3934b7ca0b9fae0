import hashlib
import json
import xml.etree.ElementTree as ET

import pytest

from envpoison.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, main

SMALL_YAML = """\
environment:
  mdp:
    transition: [[[0.6, 0.4, 0.0], [0.0, 0.5, 0.5]],
                 [[0.5, 0.0, 0.5], [0.0, 0.7, 0.3]],
                 [[0.3, 0.3, 0.4], [1.0, 0.0, 0.0]]]
    reward: [[1.0, 0.0], [0.0, 1.0], [0.5, 0.0]]
    discount: 0.5
target:
  base: [1, 1, 0]
experiment:
  iterations: 60
  repeats: 2
  seed: 3
  snapshot_interval: 20
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_YAML)
    return path


@pytest.fixture
def run_dir(tmp_path, small_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(small_config), "--out", str(out)]) in (EXIT_OK, EXIT_FAILED)
    return out


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_run_writes_outputs(run_dir):
    for name in ("config.yaml", "metrics.csv", "aggregate.csv", "final_tables.csv", "summary.json",
                 "mdp_reward.csv", "mdp_transition.csv", "attacker_trial0.csv", "agent_q_trial1.csv"):
        assert (run_dir / name).exists(), name
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["iterations"] == 60 and len(summary["trials"]) == 2


def test_run_exit_code_reflects_success(tmp_path, small_config):
    code = main(["run", "--config", str(small_config), "--out", str(tmp_path / "o")])
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert code == (EXIT_OK if summary["success"] else EXIT_FAILED)


def test_run_is_byte_reproducible(tmp_path, small_config, run_dir):
    again = tmp_path / "again"
    main(["run", "--config", str(small_config), "--out", str(again)])
    for f in sorted(run_dir.glob("*.csv")):
        assert digest(f) == digest(again / f.name), f.name


def test_output_directory_from_environment(tmp_path, small_config, monkeypatch):
    monkeypatch.setenv("ENVPOISON_OUT", str(tmp_path / "env-out"))
    main(["run", "--config", str(small_config), "--iterations", "5"])
    assert (tmp_path / "env-out" / "summary.json").exists()


def test_malformed_config_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: {iterations: 10\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_ERROR
    assert "line" in capsys.readouterr().err


def test_invalid_field_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment:\n  batch_regime: sideways\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path)]) == EXIT_ERROR
    assert "batch_regime" in capsys.readouterr().err


def test_zero_iterations_rejected(tmp_path, small_config):
    assert main(["run", "--config", str(small_config), "--iterations", "0", "--out", str(tmp_path)]) == EXIT_ERROR


def test_usage_errors_exit_one():
    assert main([]) == EXIT_ERROR
    assert main(["explode"]) == EXIT_ERROR
    assert main(["ablate", "--rho-delta", "1,-2"]) == EXIT_ERROR


def test_ablate_writes_table(tmp_path, capsys):
    code = main(["ablate", "--iterations", "30", "--repeats", "2", "--rho-delta", "0.5,8",
                 "--out", str(tmp_path)])
    assert code in (EXIT_OK, EXIT_FAILED)
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("rho_delta,final_delta_mean") and len(lines) == 3
    assert "trend" in capsys.readouterr().out


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--points", "4"]) == EXIT_OK
    first = capsys.readouterr().out
    assert main(["gradcheck", "--points", "4"]) == EXIT_OK
    assert capsys.readouterr().out == first
    assert main(["gradcheck", "--points", "4", "--corrupt"]) == EXIT_FAILED


def test_oracle_compare_budget_handling(tmp_path, capsys):
    assert main(["oracle-compare", "--iterations", "0"]) == EXIT_FAILED
    assert main(["oracle-compare", "--iterations", "-3"]) == EXIT_ERROR
    capsys.readouterr()
    main(["oracle-compare", "--iterations", "50", "--out", str(tmp_path)])
    first = capsys.readouterr().out
    main(["oracle-compare", "--iterations", "50", "--out", str(tmp_path)])
    assert capsys.readouterr().out == first
    assert (tmp_path / "residuals_whitebox.csv").exists()


def test_plot_outputs_are_wellformed_and_stable(tmp_path, run_dir):
    before = {f.name: digest(f) for f in run_dir.glob("*.csv")}
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["plot", "--input", str(run_dir), "--out", str(a)]) == EXIT_OK
    assert main(["plot", "--input", str(run_dir), "--out", str(b)]) == EXIT_OK
    charts = sorted(a.glob("*.svg"))
    assert any(c.name.startswith("traj_qbar") for c in charts)
    assert {"heat_q_bar.svg", "heat_r_bar.svg", "traj_value_gap.svg"} <= {c.name for c in charts}
    for chart in charts:
        root = ET.parse(chart).getroot()
        assert root.tag.endswith("svg")
        assert digest(chart) == digest(b / chart.name)
    assert {f.name: digest(f) for f in run_dir.glob("*.csv")} == before


def test_plot_missing_column_is_named(tmp_path, capsys):
    (tmp_path / "final_tables.csv").write_text("s,row,col,action,r_bar,delta,agent_q\n0,1,1,up,0,0,0\n")
    assert main(["plot", "--input", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_ERROR
    assert "q_bar" in capsys.readouterr().err


def test_plot_without_inputs(tmp_path):
    assert main(["plot", "--input", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_ERROR
