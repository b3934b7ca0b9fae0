"""Command-line entry point.

Subcommands::

    envpoison run             run the configured experiment, write CSVs and summary.json
    envpoison ablate          sweep rho_delta and write ablation.csv
    envpoison gradcheck       finite-difference check of every analytic derivative
    envpoison oracle-compare  sampled attack vs white-box attack on a small MDP
    envpoison plot            SVG charts from the CSVs in a directory

Exit status: 0 success, 2 the check or attack failed, 1 usage/config/runtime error.
The default output directory is ``$ENVPOISON_OUT`` or ``./envpoison-out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import harness, plotting
from .config import ConfigError, dump_config, load_config
from .gradcheck import REL_TOL, run_gradcheck
from .harness import TrialAborted
from .schedules import Constant

logger = logging.getLogger("envpoison")

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2
OUT_ENV = "ENVPOISON_OUT"


def default_config_path() -> Path:
    return Path(str(resources.files("envpoison") / "data" / "default.yaml"))


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "envpoison-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _rho_list(text):
    try:
        values = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if not values or min(values) <= 0:
        raise argparse.ArgumentTypeError("rho_delta values must be positive")
    return values


def _load(args):
    config = load_config(args.config or default_config_path())
    over = {"seed": args.seed, "iterations": args.iterations, "repeats": args.repeats}
    if getattr(args, "no_attack", False):
        zero = Constant(0.0)
        over["schedules"] = replace(config.schedules, alpha=zero, beta=zero, lam=zero)
    return config.with_overrides(**over)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    mdp = config.build_mdp()
    result = harness.run_experiment(config, workers=args.workers)
    (out / "config.yaml").write_text(dump_config(config))
    mdp.to_csv(out / "mdp_reward.csv", out / "mdp_transition.csv")
    harness.write_metrics_csv(result, out / "metrics.csv")
    harness.write_aggregate_csv(result, out / "aggregate.csv")
    harness.write_final_tables_csv(result, mdp, out / "final_tables.csv")
    for t, trial in enumerate(result.trials):
        trial.attacker.to_csv(out / f"attacker_trial{t}.csv")
        harness.write_agent_q_csv(trial.agent_q, out / f"agent_q_trial{t}.csv")
    summary = harness.summarize(result, mdp)
    _write_json(out / "summary.json", summary)
    for t in summary["trials"]:
        print(f"trial {t['trial']} seed {t['seed']}: success={t['success']} "
              f"policy={t['agent_policy']} max|agent q - q_bar|={t['max_agent_qbar_difference']:.4f}")
    print(f"success rate {summary['success_rate']:.2f}; outputs in {out}")
    return EXIT_OK if summary["success"] else EXIT_FAILED


def trend_holds(summaries) -> dict:
    """Ordering checks for a rho_delta sweep sorted by rho_delta."""
    s = sorted(summaries, key=lambda x: x.rho_delta)
    d = [x.final_delta.mean() for x in s]
    r = [x.final_rdev.mean() for x in s]
    return {
        "delta_non_increasing": bool(all(a >= b for a, b in zip(d, d[1:]))),
        "rdev_non_decreasing": bool(all(a <= b for a, b in zip(r, r[1:]))),
    }


def cmd_ablate(args) -> int:
    config = _load(args)
    out = _out_dir(args)
    rhos = args.rho_delta or [0.5, 2.0, 8.0]
    summaries = harness.ablation_rho_delta(config, rhos, workers=args.workers)
    harness.write_ablation_csv(summaries, out / "ablation.csv")
    trend = trend_holds(summaries)
    _write_json(out / "ablation.json", {
        "rho_delta": [s.rho_delta for s in summaries],
        "final_delta": [s.final_delta.tolist() for s in summaries],
        "final_rdev": [s.final_rdev.tolist() for s in summaries],
        **trend,
    })
    for s in summaries:
        print(f"rho_delta {s.rho_delta:g}: delta mean {s.final_delta.mean():.5f} "
              f"|r_bar - r| mean {s.final_rdev.mean():.5f}")
    print(f"trend: {trend}")
    return EXIT_OK if all(trend.values()) else EXIT_FAILED


def cmd_gradcheck(args) -> int:
    worst = run_gradcheck(seed=args.seed or 0, n_points=args.points, corrupt=args.corrupt)
    for name, err in worst.items():
        print(f"{name:36s} max relative error {err:.3e}  {'ok' if err <= REL_TOL else 'FAIL'}")
    return EXIT_OK if max(worst.values()) <= REL_TOL else EXIT_FAILED


def cmd_oracle_compare(args) -> int:
    mdp = harness.small_test_mdp()
    iterations = harness.ORACLE_COMPARE_ITERATIONS if args.iterations is None else args.iterations
    if iterations < 0:
        print("error: --iterations must be >= 0", file=sys.stderr)
        return EXIT_ERROR
    cmp = harness.compare_with_oracle(mdp, harness.SMALL_TEST_TARGET, harness.ORACLE_COMPARE_SCHEDULES,
                                      iterations, seed=args.seed or 0)
    print(f"iterations {iterations}")
    print(f"max |r_bar stochastic - r_bar white-box| = {cmp.max_rbar_difference:.5f}")
    print(f"max |delta stochastic - delta white-box| = {cmp.max_delta_difference:.5f}")
    for name, res in (("stochastic", cmp.stochastic_residuals), ("white-box", cmp.whitebox_residuals)):
        print(f"{name}: max bellman residual {res.max_bellman:.3e}, min gap margin {res.min_gap:.5f}")
        print(np.array2string(np.column_stack([res.bellman_residual.ravel(), res.gap_margin.ravel()]),
                              precision=5, suppress_small=True))
    if args.out:
        out = _out_dir(args)
        cmp.stochastic_residuals.to_csv(out / "residuals_stochastic.csv")
        cmp.whitebox_residuals.to_csv(out / "residuals_whitebox.csv")
        cmp.stochastic.to_csv(out / "attacker_stochastic.csv")
        cmp.whitebox.to_csv(out / "attacker_whitebox.csv")
    return EXIT_OK if cmp.passes() else EXIT_FAILED


def cmd_plot(args) -> int:
    src = Path(args.input or args.out or os.environ.get(OUT_ENV) or "envpoison-out")
    out = _out_dir(args)
    written = []
    found = False
    if (src / "aggregate.csv").exists():
        found = True
        written += plotting.plot_trajectories(src / "aggregate.csv", out)
    if (src / "final_tables.csv").exists():
        found = True
        written += plotting.plot_heat_grids(src / "final_tables.csv", out)
    if (src / "ablation.csv").exists():
        found = True
        written += plotting.plot_tradeoff(src / "ablation.csv", out)
    if not found:
        raise plotting.PlotInputError(f"no aggregate.csv, final_tables.csv or ablation.csv in {src}")
    print(f"wrote {len(written)} charts to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="envpoison", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, experiment=True):
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./envpoison-out)")
        p.add_argument("--seed", type=int)
        if experiment:
            p.add_argument("--config", help="YAML config (default: packaged maze config)")
            p.add_argument("--iterations", type=_positive_int)
            p.add_argument("--repeats", type=_positive_int)
            p.add_argument("--workers", type=_positive_int, default=1)
        return p

    run = common(sub.add_parser("run", help="run the experiment"))
    run.add_argument("--no-attack", action="store_true", help="zero attacker step sizes (control run)")
    run.set_defaults(func=cmd_run)

    abl = common(sub.add_parser("ablate", help="sweep rho_delta"))
    abl.add_argument("--rho-delta", type=_rho_list, help="comma-separated values (default 0.5,2,8)")
    abl.set_defaults(func=cmd_ablate)

    gc = common(sub.add_parser("gradcheck", help="finite-difference derivative checks"), experiment=False)
    gc.add_argument("--points", type=_positive_int, default=20)
    gc.add_argument("--corrupt", action="store_true", help="negative control: flip one derivative")
    gc.set_defaults(func=cmd_gradcheck)

    oc = common(sub.add_parser("oracle-compare", help="sampled vs white-box attack"), experiment=False)
    oc.add_argument("--iterations", type=int, help="iteration budget (0 allowed)")
    oc.set_defaults(func=cmd_oracle_compare)

    pl = sub.add_parser("plot", help="SVG charts from CSV outputs")
    pl.add_argument("--input", help="directory holding the CSVs (default: --out)")
    pl.add_argument("--out", help="chart directory")
    pl.add_argument("--format", choices=["svg"], default="svg")
    pl.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, plotting.PlotInputError, TrialAborted, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
