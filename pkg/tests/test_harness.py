import csv

import numpy as np
import pytest

from envpoison.agent import AgentConfig
from envpoison.config import ExperimentConfig
from envpoison.harness import (
    ABLATION_COLUMNS,
    ExperimentResult,
    TrialAborted,
    ablation_rho_delta,
    attack_success,
    run_experiment,
    run_trial,
    summarize,
    trial_streams,
    write_ablation_csv,
    write_aggregate_csv,
    write_metrics_csv,
)
from envpoison.schedules import Constant, Schedules


def small_config(small_mdp, **kw):
    base = dict(maze=None, mdp=small_mdp, target_base=(1, 1, 0), target_path=(),
                iterations=200, repeats=3, seed=11, snapshot_interval=50)
    base.update(kw)
    return ExperimentConfig(**base)


def test_trials_are_reproducible(small_mdp):
    cfg = small_config(small_mdp)
    a, b = run_trial(cfg, 5), run_trial(cfg, 5)
    np.testing.assert_array_equal(a.metrics, b.metrics)
    np.testing.assert_array_equal(a.agent_q, b.agent_q)
    assert not np.array_equal(a.metrics, run_trial(cfg, 6).metrics)


def test_snapshot_rows(small_mdp):
    trial = run_trial(small_config(small_mdp, iterations=120), 0)
    assert list(trial.column("iteration")) == [0, 50, 100, 120]
    assert np.all(np.isfinite(trial.metrics))


def test_success_flag_matches_policy(small_mdp):
    trial = run_trial(small_config(small_mdp), 0)
    target = np.array([1, 1, 0])
    assert trial.success == bool(np.all(trial.policy[trial.monitored] == target[trial.monitored]))


def test_single_repeat_envelope_collapses(small_mdp):
    result = run_experiment(small_config(small_mdp, repeats=1))
    for mean, lo, hi in result.aggregate().values():
        np.testing.assert_array_equal(mean, lo)
        np.testing.assert_array_equal(mean, hi)


def test_aggregate_ignores_trial_order(small_mdp):
    result = run_experiment(small_config(small_mdp))
    flipped = ExperimentResult(result.config, result.trials[::-1], result.columns)
    agg, agg2 = result.aggregate(), flipped.aggregate()
    for key in agg:
        for x, y in zip(agg[key], agg2[key]):
            np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_trial_seeds_are_offsets(small_mdp):
    result = run_experiment(small_config(small_mdp))
    assert [t.seed for t in result.trials] == [11, 12, 13]


def test_reward_step_only_moves_reward(small_mdp):
    zero = Constant(0.0)
    sch = Schedules(alpha=Constant(0.5), beta=zero, lam=zero)
    cfg = small_config(small_mdp, schedules=sch, iterations=1)
    att = run_trial(cfg, 0).attacker
    assert np.all(att.q_bar == 0) and np.all(att.delta == 0)
    # q_bar is still zero, so the reward step pulls r_bar towards zero
    assert np.all(att.r_bar != small_mdp.reward) or np.any(small_mdp.reward == 0)
    np.testing.assert_allclose(att.r_bar, 0.5 * small_mdp.reward)


def test_agent_exploration_does_not_touch_attacker_stream(small_mdp):
    cfgs = [small_config(small_mdp, agent=AgentConfig(kind="sarsa", exploration_epsilon=e)) for e in (0.0, 0.5)]
    a, b = (run_trial(c, 3) for c in cfgs)
    np.testing.assert_array_equal(a.attacker.q_bar, b.attacker.q_bar)
    np.testing.assert_array_equal(a.attacker.delta, b.attacker.delta)
    assert not np.array_equal(a.agent_q, b.agent_q)


def test_streams_are_independent():
    env, att, agent = trial_streams(0)
    draws = [g.random(4) for g in (env, att, agent)]
    assert not np.array_equal(draws[0], draws[1]) and not np.array_equal(draws[1], draws[2])


def test_sarsa_victim_plugs_in(small_mdp):
    trial = run_trial(small_config(small_mdp, agent=AgentConfig(kind="sarsa")), 0)
    assert trial.agent_q.shape == (3, 2)


def test_on_policy_regime_runs(small_mdp):
    trial = run_trial(small_config(small_mdp, batch_regime="on-policy", rollout_length=10), 0)
    assert trial.stealth_violations == 0 and trial.delta_violations == 0


def test_divergence_aborts_with_diagnostic(small_mdp):
    sch = Schedules(alpha=Constant(1.0), beta=Constant(50.0), lam=Constant(0.1), rho_phi=Constant(50.0))
    with pytest.raises(TrialAborted, match="diverged") as info:
        run_experiment(small_config(small_mdp, schedules=sch))
    assert info.value.trial == 0 and info.value.iteration is not None


def test_single_rho_ablation_equals_experiment(small_mdp):
    cfg = small_config(small_mdp)
    (summary,) = ablation_rho_delta(cfg, [2.0], state=0, action=1)
    result = run_experiment(cfg)
    np.testing.assert_array_equal(summary.final_delta, [t.attacker.delta[0, 1] for t in result.trials])
    with pytest.raises(ValueError):
        ablation_rho_delta(cfg, [0.0], state=0, action=1)


def test_attack_success_examples():
    target = [1, 0]
    q = np.array([[0.0, 1.5], [2.0, 0.5]])
    report = attack_success(q, target)
    assert report.success and report.rate == 1.0 and report.value_gaps == {0: 1.5, 1: 1.5}
    untrained = attack_success(np.zeros((2, 2)), target)
    assert not untrained.success and untrained.rate == 0.5


def test_csv_schemas(tmp_path, small_mdp):
    cfg = small_config(small_mdp)
    result = run_experiment(cfg)
    write_metrics_csv(result, tmp_path / "m.csv")
    write_aggregate_csv(result, tmp_path / "g.csv")
    header = next(csv.reader(open(tmp_path / "m.csv")))
    assert header[:2] == ["iteration", "trial"]
    assert "qbar_s0_1" in header and "rdev_norm" in header and "min_gap_margin" in header
    assert next(csv.reader(open(tmp_path / "g.csv"))) == ["iteration", "field", "mean", "min", "max"]
    write_ablation_csv(ablation_rho_delta(cfg, [1.0, 4.0], state=0, action=1), tmp_path / "a.csv")
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ABLATION_COLUMNS and len(rows) == 3


def test_summary_fields(small_mdp):
    cfg = small_config(small_mdp)
    summary = summarize(run_experiment(cfg), small_mdp)
    assert summary["repeats"] == 3 and len(summary["trials"]) == 3
    assert {"success", "qbar_value_gap", "max_agent_qbar_difference"} <= set(summary["trials"][0])


def test_parallel_workers_match_serial(small_mdp):
    cfg = small_config(small_mdp)
    serial, parallel = run_experiment(cfg), run_experiment(cfg, workers=2)
    np.testing.assert_array_equal(serial.stacked(), parallel.stacked())
