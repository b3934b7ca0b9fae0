"""Man-in-the-middle poisoner.

The attacker keeps a poisoned reward table ``r_bar``, the Q-values ``q_bar``
it wants to induce, and per-pair transition-poisoning intensities ``delta``.
Each intercepted sample ``(s, a, r, s')`` is forwarded to the agent as
``(s, a, r_bar[s, a], s_bar')`` where ``s_bar'`` is, with probability
``delta[s, a]``, redrawn uniformly from the reachable set of ``(s, a)``.

After the agent has consumed the batch the attacker runs three sampled
descent steps, in this order and each sequentially over the batch:

1. ``r_bar``  towards the lower-level solution (reads the old ``q_bar``),
2. ``q_bar``  along the conjugate upper-level gradient (reads the new
   ``r_bar``; writes ``q_bar[s, a]`` and ``q_bar[s_bar', target(s_bar')]``
   in place, while the gap penalties read ``q_bar`` as it was at the start
   of the step),
3. ``delta``  along the conjugate upper-level gradient, projected on [0, 1]
   (reads the new ``r_bar`` and ``q_bar`` and the *true* next state).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numba import njit

from .mdp import ReachableSets, TabularMdp, TransitionSample


def phi(x):
    """Hinge ``x * 1(x > 0)``; works on scalars and arrays."""
    return np.maximum(x, 0.0) if isinstance(x, np.ndarray) else (x if x > 0 else 0.0)


@dataclass
class AttackerState:
    r_bar: np.ndarray
    q_bar: np.ndarray
    delta: np.ndarray
    target_policy: np.ndarray
    discount: float

    @classmethod
    def initial(cls, mdp: TabularMdp, target_policy) -> "AttackerState":
        """Zero-poisoning start: true rewards, no redirection, zero Q-values."""
        target = np.asarray(target_policy, dtype=np.int64)
        if target.shape != (mdp.n_states,):
            raise ValueError("target policy must assign one action per state")
        if np.any(target < 0) or np.any(target >= mdp.n_actions):
            raise ValueError("target policy action out of range")
        return cls(
            r_bar=np.array(mdp.reward, dtype=float),
            q_bar=np.zeros_like(mdp.reward, dtype=float),
            delta=np.zeros_like(mdp.reward, dtype=float),
            target_policy=target.copy(),
            discount=float(mdp.discount),
        )

    def copy(self) -> "AttackerState":
        return AttackerState(
            self.r_bar.copy(), self.q_bar.copy(), self.delta.copy(),
            self.target_policy.copy(), self.discount,
        )

    def target_values(self) -> np.ndarray:
        return self.q_bar[np.arange(self.q_bar.shape[0]), self.target_policy]

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(self.r_bar)), np.max(np.abs(self.q_bar))))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["s", "a", "r_bar", "q_bar", "delta"])
            for s in range(self.r_bar.shape[0]):
                for a in range(self.r_bar.shape[1]):
                    w.writerow([
                        s, a, repr(float(self.r_bar[s, a])),
                        repr(float(self.q_bar[s, a])), repr(float(self.delta[s, a])),
                    ])


@dataclass(frozen=True)
class PoisonedSample:
    state: int
    action: int
    true_reward: float
    poisoned_reward: float
    true_next: int
    poisoned_next: int


@dataclass
class PoisonedBatch:
    """Column layout of a list of :class:`PoisonedSample` records.

    ``true_reward`` and ``true_next`` are for the attacker's own updates; the
    agent only ever sees :meth:`observed`.
    """

    states: np.ndarray
    actions: np.ndarray
    true_reward: np.ndarray
    poisoned_reward: np.ndarray
    true_next: np.ndarray
    poisoned_next: np.ndarray

    def __len__(self):
        return len(self.states)

    def observed(self):
        return self.states, self.actions, self.poisoned_reward, self.poisoned_next

    def samples(self) -> list:
        return [
            PoisonedSample(int(s), int(a), float(r), float(rb), int(n), int(nb))
            for s, a, r, rb, n, nb in zip(
                self.states, self.actions, self.true_reward,
                self.poisoned_reward, self.true_next, self.poisoned_next,
            )
        ]

    @classmethod
    def from_samples(cls, samples) -> "PoisonedBatch":
        samples = list(samples)
        col = lambda name, dt: np.array([getattr(p, name) for p in samples], dtype=dt)
        return cls(
            col("state", np.int64), col("action", np.int64),
            col("true_reward", float), col("poisoned_reward", float),
            col("true_next", np.int64), col("poisoned_next", np.int64),
        )


def poison_sample(state: AttackerState, sample: TransitionSample, reach: ReachableSets,
                  rng: np.random.Generator) -> PoisonedSample:
    s, a = sample.state, sample.action
    u_swap, u_pick = rng.random(2)
    nxt = sample.next_state
    if u_swap < state.delta[s, a]:
        size = reach.size[s, a]
        if size == 0:
            raise RuntimeError(f"empty reachable set at ({s}, {a})")
        nxt = int(reach.index[s, a, min(int(u_pick * size), size - 1)])
    return PoisonedSample(s, a, float(sample.reward), float(state.r_bar[s, a]), int(sample.next_state), nxt)


def poison_batch(state: AttackerState, states, actions, rewards, next_states,
                 reach: ReachableSets, rng: np.random.Generator) -> PoisonedBatch:
    """Vectorised :func:`poison_sample` over parallel arrays.

    Draws two uniforms per sample in the same order as ``poison_sample``, so
    a batch and the equivalent sequence of single calls agree draw for draw.
    """
    states = np.asarray(states, dtype=np.int64)
    actions = np.asarray(actions, dtype=np.int64)
    next_states = np.asarray(next_states, dtype=np.int64)
    u = rng.random((len(states), 2))
    size = reach.size[states, actions]
    pick = np.minimum((u[:, 1] * size).astype(np.int64), size - 1)
    swapped = reach.index[states, actions, pick]
    poisoned_next = np.where(u[:, 0] < state.delta[states, actions], swapped, next_states)
    return PoisonedBatch(
        states, actions, np.asarray(rewards, dtype=float),
        state.r_bar[states, actions].copy(), next_states, poisoned_next.astype(np.int64),
    )


@njit(cache=True)
def _reward_kernel(r_bar, q_bar, target, states, actions, poisoned_next, alpha, gamma):
    for i in range(states.shape[0]):
        s, a, nb = states[i], actions[i], poisoned_next[i]
        grad = r_bar[s, a] - q_bar[s, a] + gamma * q_bar[nb, target[nb]]
        r_bar[s, a] -= alpha * grad


@njit(cache=True)
def _qvalue_kernel(r_bar, q_bar, target, states, actions, true_reward, poisoned_next,
                   beta, rho_phi, eps, gamma):
    # gap penalties read the iteration-start table; writes accumulate in place
    q_old = q_bar.copy()
    n_actions = q_bar.shape[1]
    for i in range(states.shape[0]):
        s, a, nb = states[i], actions[i], poisoned_next[i]
        dev = r_bar[s, a] - true_reward[i]
        ts = target[s]
        pen = 0.0
        if a != ts:
            x = q_old[s, a] + eps - q_old[s, ts]
            if x > 0.0:
                pen = rho_phi * x
        else:
            for u in range(n_actions):
                if u != a:
                    x = q_old[s, u] + eps - q_old[s, a]
                    if x > 0.0:
                        pen -= rho_phi * x
        q_bar[s, a] -= beta * (dev + pen)
        q_bar[nb, target[nb]] += beta * gamma * dev


@njit(cache=True)
def _delta_kernel(r_bar, q_bar, delta, target, states, actions, true_reward, true_next,
                  reach_index, reach_size, lam, rho_delta, gamma):
    for i in range(states.shape[0]):
        s, a, n = states[i], actions[i], true_next[i]
        dev = r_bar[s, a] - true_reward[i]
        size = reach_size[s, a]
        avg = 0.0
        for j in range(size):
            sp = reach_index[s, a, j]
            avg += q_bar[sp, target[sp]]
        avg /= size
        grad = gamma * dev * q_bar[n, target[n]] + rho_delta * delta[s, a] - gamma * dev * avg
        d = delta[s, a] - lam * grad
        if d < 0.0:
            d = 0.0
        elif d > 1.0:
            d = 1.0
        delta[s, a] = d


def update_reward(state: AttackerState, batch: PoisonedBatch, alpha_k: float) -> None:
    """Sampled lower-level step on ``r_bar``; uses ``q_bar`` as it stands."""
    _reward_kernel(state.r_bar, state.q_bar, state.target_policy, batch.states,
                   batch.actions, batch.poisoned_next, float(alpha_k), state.discount)


def update_qvalue(state: AttackerState, batch: PoisonedBatch, beta_k: float,
                  rho_phi_k: float, eps: float) -> None:
    """Sampled conjugate upper-level step on ``q_bar``.

    The successor write ``q_bar[s_bar', target(s_bar')] += beta*gamma*(r_bar - r)``
    is the one-sample estimate of the inverse-probability sum in the exact
    gradient: averaged over ``s_bar' ~ P_delta(.|s, a)`` it contributes
    ``gamma * P_delta(s~|s, a) * (r_bar - r)`` to every target-action entry.
    Gap penalties are evaluated on a copy taken before the first sample, so
    their per-state pushes cancel instead of drifting the common level.
    """
    _qvalue_kernel(state.r_bar, state.q_bar, state.target_policy, batch.states,
                   batch.actions, batch.true_reward, batch.poisoned_next,
                   float(beta_k), float(rho_phi_k), float(eps), state.discount)


def update_delta(state: AttackerState, batch: PoisonedBatch, lambda_k: float,
                 rho_delta: float, reach: ReachableSets) -> None:
    """Projected sampled step on ``delta``.

    The true next state estimates ``sum_s' P(s'|s,a) q_bar[s', target]``; the
    uniform term is averaged exactly over the known reachable set.
    """
    _delta_kernel(state.r_bar, state.q_bar, state.delta, state.target_policy,
                  batch.states, batch.actions, batch.true_reward, batch.true_next,
                  reach.index, reach.size, float(lambda_k), float(rho_delta), state.discount)


def attacker_step(state: AttackerState, batch: PoisonedBatch, schedules, k: int,
                  reach: ReachableSets) -> None:
    """Reward, Q-value and intensity updates for iteration ``k``, in order."""
    alpha, beta, lam, rho_phi = schedules.at(k)
    update_reward(state, batch, alpha)
    update_qvalue(state, batch, beta, rho_phi, schedules.epsilon_gap)
    update_delta(state, batch, lam, schedules.rho_delta, reach)
