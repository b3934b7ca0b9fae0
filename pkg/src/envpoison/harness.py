"""Online poisoning experiments: trials, repeats and the rho_delta sweep.

One iteration of a trial:

1. the environment emits a batch (one sample per (s, a) in the full-sweep
   regime, or an epsilon-greedy rollout of the victim in the on-policy one);
2. the attacker rewrites every sample;
3. the victim consumes the poisoned batch;
4. the attacker updates ``r_bar``, ``q_bar`` and ``delta`` in that order.

Randomness: trial ``t`` of an experiment with seed ``n`` uses
``SeedSequence(n + t)``, spawned into three independent streams for the
environment, the attacker and the agent (in that order).
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agent import make_agent
from .attacker import AttackerState, attacker_step, poison_batch
from .config import ExperimentConfig
from .mdp import TabularMdp, draw_next_states, reachable_sets, sample_sweep
from .oracle import DIVERGENCE_LIMIT, check_constraints
from .schedules import Decay, Ramp, Schedules

logger = logging.getLogger(__name__)


class TrialAborted(RuntimeError):
    def __init__(self, message, trial=None, iteration=None):
        super().__init__(message)
        self.trial = trial
        self.iteration = iteration


def trial_streams(seed: int) -> tuple:
    """(environment, attacker, agent) generators for one trial seed."""
    env, att, agent = np.random.SeedSequence(int(seed)).spawn(3)
    return np.random.default_rng(env), np.random.default_rng(att), np.random.default_rng(agent)


def column_key(mdp: TabularMdp, s: int, a: int = None) -> str:
    key = f"s{mdp.state_name(s)}"
    return key if a is None else f"{key}_{mdp.action_name(a)}"


def metric_columns(mdp: TabularMdp, monitored) -> list:
    cols = ["iteration"]
    for prefix in ("rbar", "qbar", "delta", "agentq"):
        cols += [f"{prefix}_{column_key(mdp, s, a)}" for s in monitored for a in range(mdp.n_actions)]
    cols += [f"gap_{column_key(mdp, s)}" for s in monitored]
    cols += ["rdev_norm", "delta_norm", "max_bellman_residual", "min_gap_margin"]
    return cols


def snapshot(k: int, mdp: TabularMdp, reach, att: AttackerState, agent_q: np.ndarray,
             monitored, eps: float) -> list:
    row = [k]
    for table in (att.r_bar, att.q_bar, att.delta, agent_q):
        row += [float(table[s, a]) for s in monitored for a in range(mdp.n_actions)]
    for s in monitored:
        others = np.delete(att.q_bar[s], att.target_policy[s])
        gap = att.q_bar[s, att.target_policy[s]] - others.max() if others.size else np.inf
        row.append(float(gap))
    res = check_constraints(att, mdp, reach, eps)
    row += [
        float(np.linalg.norm(att.r_bar - mdp.reward)),
        float(np.linalg.norm(att.delta)),
        res.max_bellman,
        res.min_gap,
    ]
    return row


@dataclass
class TrialResult:
    attacker: AttackerState
    agent_q: np.ndarray
    policy: np.ndarray
    columns: list
    metrics: np.ndarray
    success: bool
    monitored: list
    seed: int
    stealth_violations: int = 0
    delta_violations: int = 0

    def column(self, name: str) -> np.ndarray:
        return self.metrics[:, self.columns.index(name)]


def _collect_on_policy(mdp, agent, position, length, start, env_rng):
    states = np.empty(length, dtype=np.int64)
    actions = np.empty(length, dtype=np.int64)
    nxt = np.empty(length, dtype=np.int64)
    s = position
    u = env_rng.random(length)
    for i in range(length):
        if s in mdp.absorbing:
            s = start
        a = agent.act(s)
        states[i], actions[i] = s, a
        s = nxt[i] = draw_next_states(mdp.transition, np.array([s]), np.array([a]), u[i:i + 1])[0]
    return states, actions, mdp.reward[states, actions].copy(), nxt, int(s)


def run_trial(config: ExperimentConfig, seed: int, trial: int = 0) -> TrialResult:
    mdp = config.build_mdp()
    reach = reachable_sets(mdp)
    target = config.target_policy(mdp)
    monitored = config.monitored_indices(mdp)
    schedules = config.schedules
    eps = schedules.epsilon_gap
    env_rng, att_rng, agent_rng = trial_streams(seed)

    att = AttackerState.initial(mdp, target)
    agent = make_agent(config.agent, mdp.n_states, mdp.n_actions, mdp.discount, agent_rng)
    columns = metric_columns(mdp, monitored)
    rows = [snapshot(0, mdp, reach, att, agent.q, monitored, eps)]
    stealth = delta_bad = 0
    position = config.start_index(mdp)
    start = position

    for k in range(config.iterations):
        if config.batch_regime == "full-sweep":
            states, actions, rewards, nxt = sample_sweep(mdp, env_rng)
        else:
            states, actions, rewards, nxt, position = _collect_on_policy(
                mdp, agent, position, config.rollout_length, start, env_rng)
        batch = poison_batch(att, states, actions, rewards, nxt, reach, att_rng)
        stealth += int(np.count_nonzero(~reach.mask[batch.states, batch.actions, batch.poisoned_next]))
        agent.consume(*batch.observed(), k)
        attacker_step(att, batch, schedules, k, reach)
        delta_bad += int(np.count_nonzero((att.delta < 0.0) | (att.delta > 1.0)))

        size = att.max_abs()
        if not np.isfinite(size) or size > DIVERGENCE_LIMIT:
            raise TrialAborted(
                f"trial {trial}: attacker diverged at iteration {k + 1} "
                f"(max |entry| = {size:.3g}, rho_phi = {schedules.rho_phi(k):.3g})",
                trial=trial, iteration=k + 1,
            )
        done = k + 1
        if done % config.snapshot_interval == 0 or done == config.iterations:
            rows.append(snapshot(done, mdp, reach, att, agent.q, monitored, eps))

    policy = agent.policy()
    success = bool(np.all(policy[monitored] == target[monitored]))
    return TrialResult(
        attacker=att, agent_q=agent.q.copy(), policy=policy, columns=columns,
        metrics=np.array(rows, dtype=float), success=success, monitored=monitored,
        seed=seed, stealth_violations=stealth, delta_violations=delta_bad,
    )


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    trials: list
    columns: list = field(default_factory=list)

    def stacked(self) -> np.ndarray:
        """Metrics as (trial, snapshot, column)."""
        return np.stack([t.metrics for t in self.trials])

    def aggregate(self) -> dict:
        """Per-column (mean, min, max) series across trials."""
        data = self.stacked()
        return {
            name: (data[:, :, j].mean(axis=0), data[:, :, j].min(axis=0), data[:, :, j].max(axis=0))
            for j, name in enumerate(self.columns) if name != "iteration"
        }

    @property
    def iterations(self) -> np.ndarray:
        return self.trials[0].metrics[:, 0]

    @property
    def success_rate(self) -> float:
        return float(np.mean([t.success for t in self.trials]))

    def final(self, name: str) -> np.ndarray:
        """Last-snapshot value of ``name`` in every trial."""
        return np.array([t.column(name)[-1] for t in self.trials])


def _run_indexed(args):
    config, t = args
    try:
        return run_trial(config, config.seed + t, trial=t)
    except TrialAborted:
        raise
    except Exception as exc:
        raise TrialAborted(f"trial {t}: {exc}", trial=t) from exc


def run_experiment(config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    jobs = [(config, t) for t in range(config.repeats)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_run_indexed, jobs))
    else:
        trials = [_run_indexed(job) for job in jobs]
    return ExperimentResult(config, trials, trials[0].columns)


@dataclass
class AblationSummary:
    rho_delta: float
    final_delta: np.ndarray
    final_rdev: np.ndarray
    result: ExperimentResult

    def row(self) -> list:
        d, r = self.final_delta, self.final_rdev
        return [self.rho_delta, d.mean(), d.min(), d.max(), r.mean(), r.min(), r.max()]


ABLATION_COLUMNS = [
    "rho_delta", "final_delta_mean", "final_delta_min", "final_delta_max",
    "final_rdev_mean", "final_rdev_min", "final_rdev_max",
]


def ablation_rho_delta(config: ExperimentConfig, rho_values, state=(1, 1), action="down",
                       workers: int = 1) -> list:
    """Run the experiment once per ``rho_delta``; report final ``delta`` and
    ``|r_bar - r|`` at ``(state, action)`` across trials."""
    rho_values = [float(r) for r in rho_values]
    if not rho_values or min(rho_values) <= 0:
        raise ValueError("rho_delta values must be positive")
    mdp = config.build_mdp()
    s, a = mdp.state_index(state), mdp.action_index(action)
    r_true = mdp.reward[s, a]
    out = []
    for rho in rho_values:
        result = run_experiment(config.with_overrides(rho_delta=rho), workers=workers)
        final_delta = np.array([t.attacker.delta[s, a] for t in result.trials])
        final_rdev = np.array([abs(t.attacker.r_bar[s, a] - r_true) for t in result.trials])
        out.append(AblationSummary(rho, final_delta, final_rdev, result))
    return out


@dataclass
class SuccessReport:
    per_state: dict
    rate: float
    value_gaps: dict
    success: bool


def attack_success(agent_q: np.ndarray, target_policy, monitored=None, mdp: TabularMdp = None) -> SuccessReport:
    """Compare the victim's greedy policy with the target, state by state.

    ``value_gaps`` are the victim's margins ``q[s, target] - max_{a != target} q[s, a]``
    at the monitored states (all states by default).
    """
    q = np.asarray(agent_q)
    target = np.asarray(target_policy)
    states = range(q.shape[0]) if monitored is None else monitored
    policy = np.argmax(q, axis=1)
    name = (lambda s: mdp.state_name(s)) if mdp is not None else (lambda s: s)
    per_state, gaps = {}, {}
    for s in states:
        per_state[name(s)] = bool(policy[s] == target[s])
        others = np.delete(q[s], target[s])
        gaps[name(s)] = float(q[s, target[s]] - others.max()) if others.size else float("inf")
    rate = float(np.mean(list(per_state.values())))
    return SuccessReport(per_state, rate, gaps, rate == 1.0)


# ---------------------------------------------------------------- CSV output

def _fmt(x) -> str:
    return repr(float(x))


def write_metrics_csv(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "trial"] + result.columns[1:])
        for t, trial in enumerate(result.trials):
            for row in trial.metrics:
                w.writerow([int(row[0]), t] + [_fmt(x) for x in row[1:]])


def write_aggregate_csv(result: ExperimentResult, path) -> None:
    agg = result.aggregate()
    iters = result.iterations
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "field", "mean", "min", "max"])
        for i, it in enumerate(iters):
            for name, (mean, lo, hi) in agg.items():
                w.writerow([int(it), name, _fmt(mean[i]), _fmt(lo[i]), _fmt(hi[i])])


def write_ablation_csv(summaries, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(ABLATION_COLUMNS)
        for summ in summaries:
            w.writerow([_fmt(x) for x in summ.row()])


def write_final_tables_csv(result: ExperimentResult, mdp: TabularMdp, path) -> None:
    """Trial-mean final tables, one row per (state, action), with maze cell
    coordinates for the heat-grid charts (state index repeated when the
    environment is not a maze)."""
    mean = lambda get: np.mean([get(t) for t in result.trials], axis=0)
    tables = {
        "r_bar": mean(lambda t: t.attacker.r_bar), "q_bar": mean(lambda t: t.attacker.q_bar),
        "delta": mean(lambda t: t.attacker.delta), "agent_q": mean(lambda t: t.agent_q),
    }
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["s", "row", "col", "action", *tables])
        for s in range(mdp.n_states):
            label = mdp.labels[s] if mdp.labels is not None else s
            row, col = label if isinstance(label, tuple) else (1, s + 1)
            for a in range(mdp.n_actions):
                w.writerow([s, row, col, mdp.action_name(a), *(_fmt(t[s, a]) for t in tables.values())])


def write_agent_q_csv(q: np.ndarray, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["s", "a", "q"])
        for s in range(q.shape[0]):
            for a in range(q.shape[1]):
                w.writerow([s, a, _fmt(q[s, a])])


def summarize(result: ExperimentResult, mdp: TabularMdp) -> dict:
    """Machine-readable outcome: per-trial success and final value gaps."""
    config = result.config
    target = config.target_policy(mdp)
    trials = []
    for t, trial in enumerate(result.trials):
        report = attack_success(trial.agent_q, target, trial.monitored, mdp)
        gaps = {mdp.state_name(s): float(trial.column(f"gap_{column_key(mdp, s)}")[-1])
                for s in trial.monitored}
        mon = trial.monitored
        trials.append({
            "trial": t, "seed": trial.seed, "success": trial.success,
            "agent_policy": {mdp.state_name(s): mdp.action_name(int(trial.policy[s])) for s in mon},
            "qbar_value_gap": gaps, "agent_value_gap": report.value_gaps,
            "max_agent_qbar_difference": float(np.abs(trial.agent_q[mon] - trial.attacker.q_bar[mon]).max()),
            "stealth_violations": trial.stealth_violations,
            "delta_violations": trial.delta_violations,
        })
    return {
        "success": all(t["success"] for t in trials),
        "success_rate": result.success_rate,
        "iterations": config.iterations,
        "repeats": config.repeats,
        "seed": config.seed,
        "target": {mdp.state_name(s): mdp.action_name(int(target[s])) for s in result.trials[0].monitored},
        "trials": trials,
    }


# ------------------------------------------------- stochastic vs white-box

def small_test_mdp() -> TabularMdp:
    """Three states, two actions; the target flips the optimal choice at state 0."""
    P = np.array([
        [[0.6, 0.4, 0.0], [0.0, 0.5, 0.5]],
        [[0.5, 0.0, 0.5], [0.0, 0.7, 0.3]],
        [[0.3, 0.3, 0.4], [1.0, 0.0, 0.0]],
    ])
    r = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.0]])
    return TabularMdp(P, r, 0.5)


SMALL_TEST_TARGET = (1, 1, 0)
ORACLE_COMPARE_ITERATIONS = 10_000
# fast penalty ramp and a light intensity weight so that delta is visibly non-zero
ORACLE_COMPARE_SCHEDULES = Schedules(
    alpha=Decay(1.0, 20.0), beta=Decay(0.2, 200.0), lam=Decay(0.2, 1000.0),
    rho_phi=Ramp(1.0, 20.0, 1000.0), rho_delta=0.02, epsilon_gap=1.0,
)


@dataclass
class OracleComparison:
    stochastic: AttackerState
    whitebox: AttackerState
    stochastic_residuals: object
    whitebox_residuals: object
    max_rbar_difference: float
    max_delta_difference: float
    tolerance: float = 1e-2

    def passes(self) -> bool:
        return all(
            res.max_bellman <= self.tolerance and res.min_gap >= -self.tolerance
            for res in (self.stochastic_residuals, self.whitebox_residuals)
        )


def exact_residuals(state: AttackerState, mdp: TabularMdp, reach, eps: float):
    """Constraint residuals with ``q_bar`` replaced by the exact target-policy
    Q-values of the poisoned model."""
    from .mdp import exact_policy_q
    from .oracle import poisoned_model
    q = exact_policy_q(poisoned_model(state, mdp, reach), state.target_policy)
    return check_constraints(state, mdp, reach, eps, q_bar=q)


def compare_with_oracle(mdp: TabularMdp, target_policy, schedules, iterations: int,
                        seed: int = 0) -> OracleComparison:
    """Run the sampled attack (full-sweep batches) and the white-box attack
    for the same number of iterations and schedules."""
    from .oracle import whitebox_attack
    reach = reachable_sets(mdp)
    target = np.asarray(target_policy, dtype=np.int64)
    if iterations > 0:
        config = ExperimentConfig(
            maze=None, mdp=mdp, target_base=tuple(int(a) for a in target), target_path=(),
            schedules=schedules, iterations=iterations, repeats=1, seed=seed,
            monitored_states=tuple(range(mdp.n_states)), snapshot_interval=iterations,
        )
        stoch = run_trial(config, seed).attacker
    else:
        stoch = AttackerState.initial(mdp, target)
    white = whitebox_attack(mdp, target, schedules, iterations, reach=reach)
    eps = schedules.epsilon_gap
    return OracleComparison(
        stochastic=stoch, whitebox=white,
        stochastic_residuals=exact_residuals(stoch, mdp, reach, eps),
        whitebox_residuals=exact_residuals(white, mdp, reach, eps),
        max_rbar_difference=float(np.abs(stoch.r_bar - white.r_bar).max()),
        max_delta_difference=float(np.abs(stoch.delta - white.delta).max()),
    )
