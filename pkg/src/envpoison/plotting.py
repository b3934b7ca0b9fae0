"""SVG charts built only from the CSV files the harness writes.

Three chart families:

* trajectories: one chart per monitored state and tracked quantity, one
  mean line per action with a shaded min-max band across trials;
* heat grids: final mean ``q_bar`` / ``r_bar`` laid out on the maze, one
  panel per action;
* trade-off: final intensity and reward deviation against ``rho_delta``.

Output is byte-stable for identical input (fixed SVG id salt, no date).
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SVG_SALT = "envpoison"
TRAJECTORY_PREFIXES = ("qbar", "agentq", "rbar", "delta")
FINAL_TABLE_COLUMNS = ("s", "row", "col", "action", "r_bar", "q_bar", "delta", "agent_q")
ABLATION_REQUIRED = ("rho_delta", "final_delta_mean", "final_delta_min", "final_delta_max",
                     "final_rdev_mean", "final_rdev_min", "final_rdev_max")


class PlotInputError(ValueError):
    """A CSV is missing or lacks a required column."""


def _read_csv(path: Path, required) -> list:
    if not path.exists():
        raise PlotInputError(f"missing input file {path}")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise PlotInputError(f"{path.name}: missing column '{col}'")
        return list(reader)


def _save(fig, path: Path) -> Path:
    with plt.rc_context({"svg.hashsalt": SVG_SALT, "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def load_aggregate(path) -> dict:
    """``{field: (iterations, mean, min, max)}`` from an aggregate CSV."""
    rows = _read_csv(Path(path), ("iteration", "field", "mean", "min", "max"))
    series = defaultdict(list)
    for r in rows:
        series[r["field"]].append((int(r["iteration"]), float(r["mean"]), float(r["min"]), float(r["max"])))
    return {k: tuple(np.array(c) for c in zip(*sorted(v))) for k, v in series.items()}


def _group_trajectories(series: dict) -> dict:
    """``{(prefix, state): [(action, field), ...]}`` for per-action fields."""
    groups = defaultdict(list)
    for name in series:
        prefix, _, rest = name.partition("_")
        if prefix not in TRAJECTORY_PREFIXES:
            continue
        state, _, action = rest.rpartition("_")
        if not state.startswith("s"):
            continue
        groups[(prefix, state)].append((action, name))
    return groups


def plot_trajectories(aggregate_csv, out_dir) -> list:
    series = load_aggregate(aggregate_csv)
    out_dir = Path(out_dir)
    written = []
    for (prefix, state), members in sorted(_group_trajectories(series).items()):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for action, name in members:
            it, mean, lo, hi = series[name]
            line, = ax.plot(it, mean, label=action, lw=1.4)
            ax.fill_between(it, lo, hi, color=line.get_color(), alpha=0.2, lw=0)
        ax.set_xlabel("iteration")
        ax.set_ylabel(prefix)
        ax.set_title(f"{prefix} at state {state[1:]} (mean, min-max over trials)")
        ax.legend(title="action", fontsize=8)
        fig.tight_layout()
        written.append(_save(fig, out_dir / f"traj_{prefix}_{state}.svg"))
    gaps = sorted(n for n in series if n.startswith("gap_"))
    if gaps:
        fig, ax = plt.subplots(figsize=(6, 3.6))
        for name in gaps:
            it, mean, lo, hi = series[name]
            line, = ax.plot(it, mean, label=name[5:], lw=1.2)
            ax.fill_between(it, lo, hi, color=line.get_color(), alpha=0.15, lw=0)
        ax.set_xlabel("iteration")
        ax.set_ylabel("value gap of q_bar")
        ax.set_title("target-action value gap")
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        written.append(_save(fig, out_dir / "traj_value_gap.svg"))
    return written


def plot_heat_grids(final_csv, out_dir) -> list:
    rows = _read_csv(Path(final_csv), FINAL_TABLE_COLUMNS)
    actions = list(dict.fromkeys(r["action"] for r in rows))
    n_rows = max(int(r["row"]) for r in rows)
    n_cols = max(int(r["col"]) for r in rows)
    written = []
    for quantity in ("q_bar", "r_bar"):
        grids = {a: np.full((n_rows, n_cols), np.nan) for a in actions}
        for r in rows:
            grids[r["action"]][int(r["row"]) - 1, int(r["col"]) - 1] = float(r[quantity])
        finite = np.concatenate([g[np.isfinite(g)] for g in grids.values()])
        vmin, vmax = float(finite.min()), float(finite.max())
        fig, axes = plt.subplots(1, len(actions), figsize=(2.6 * len(actions), 3.4), squeeze=False)
        for ax, a in zip(axes[0], actions):
            im = ax.imshow(grids[a], cmap="viridis", vmin=vmin, vmax=vmax)
            for (i, j), v in np.ndenumerate(grids[a]):
                if np.isfinite(v):
                    ax.text(j, i, f"{v:.1f}", ha="center", va="center", fontsize=6, color="w")
            ax.set_title(a)
            ax.set_xticks(range(n_cols), [str(c + 1) for c in range(n_cols)])
            ax.set_yticks(range(n_rows), [str(r + 1) for r in range(n_rows)])
        fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8, label=f"final mean {quantity}")
        fig.suptitle(f"final {quantity} per cell and action (walls blank)")
        written.append(_save(fig, Path(out_dir) / f"heat_{quantity}.svg"))
    return written


def plot_tradeoff(ablation_csv, out_dir) -> list:
    rows = _read_csv(Path(ablation_csv), ABLATION_REQUIRED)
    data = {k: np.array([float(r[k]) for r in rows]) for k in ABLATION_REQUIRED}
    order = np.argsort(data["rho_delta"])
    rho = data["rho_delta"][order]
    fig, ax1 = plt.subplots(figsize=(6, 3.6))
    ax2 = ax1.twinx()
    for ax, key, label, color in ((ax1, "delta", "final delta", "C0"),
                                  (ax2, "rdev", "final |r_bar - r|", "C3")):
        mean = data[f"final_{key}_mean"][order]
        ax.plot(rho, mean, "o-", color=color, label=label)
        ax.fill_between(rho, data[f"final_{key}_min"][order], data[f"final_{key}_max"][order],
                        color=color, alpha=0.2, lw=0)
        ax.set_ylabel(label, color=color)
    ax1.set_xscale("log")
    ax1.set_xlabel("rho_delta")
    ax1.set_title("intensity weight trade-off")
    fig.legend(loc="upper center", fontsize=8)
    fig.tight_layout()
    return [_save(fig, Path(out_dir) / "tradeoff_rho_delta.svg")]
