import csv
import xml.etree.ElementTree as ET

import pytest

from envpoison.harness import ABLATION_COLUMNS
from envpoison.plotting import PlotInputError, load_aggregate, plot_tradeoff, plot_trajectories


def write_rows(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


def test_tradeoff_chart(tmp_path):
    write_rows(tmp_path / "ablation.csv", ABLATION_COLUMNS, [
        [0.5, 0.3, 0.2, 0.4, 0.1, 0.05, 0.2],
        [2.0, 0.2, 0.1, 0.3, 0.3, 0.2, 0.4],
        [8.0, 0.1, 0.05, 0.2, 0.6, 0.5, 0.7],
    ])
    (chart,) = plot_tradeoff(tmp_path / "ablation.csv", tmp_path)
    assert ET.parse(chart).getroot().tag.endswith("svg")
    assert chart.name == "tradeoff_rho_delta.svg"


def test_aggregate_grouping(tmp_path):
    rows = []
    for it in (0, 10):
        for field in ("qbar_s1_1_down", "qbar_s1_1_right", "delta_norm", "gap_s1_1"):
            rows.append([it, field, it * 0.1, it * 0.05, it * 0.2])
    write_rows(tmp_path / "aggregate.csv", ["iteration", "field", "mean", "min", "max"], rows)
    series = load_aggregate(tmp_path / "aggregate.csv")
    assert list(series["qbar_s1_1_down"][0]) == [0, 10]
    names = sorted(c.name for c in plot_trajectories(tmp_path / "aggregate.csv", tmp_path))
    assert names == ["traj_qbar_s1_1.svg", "traj_value_gap.svg"]


def test_missing_file_and_column(tmp_path):
    with pytest.raises(PlotInputError, match="missing input"):
        load_aggregate(tmp_path / "nope.csv")
    write_rows(tmp_path / "aggregate.csv", ["iteration", "field", "mean", "min"], [])
    with pytest.raises(PlotInputError, match="'max'"):
        load_aggregate(tmp_path / "aggregate.csv")
