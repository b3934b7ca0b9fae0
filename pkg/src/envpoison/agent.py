"""Victim agents that learn only from (poisoned) transition batches.

The harness talks to a victim through :class:`Agent`: ``consume`` a batch of
``(s, a, r, s')`` columns, expose ``q`` and ``policy()``, and optionally
``act`` for on-policy data collection. Nothing here knows about the
attacker.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from numba import njit

from .schedules import Decay, schedule_from_dict, schedule_to_dict


@dataclass(frozen=True)
class AgentConfig:
    learning_rate: object = field(default_factory=lambda: Decay(0.5, 200.0, 1.0))
    exploration_epsilon: float = 0.1
    initial_q: float = 0.0
    kind: str = "q_learning"

    def __post_init__(self):
        if not 0.0 <= self.exploration_epsilon <= 1.0:
            raise ValueError("exploration_epsilon must be in [0, 1]")
        lr0 = self.learning_rate(0)
        if not 0.0 < lr0 <= 1.0:
            raise ValueError(f"learning rate must be in (0, 1], got {lr0}")
        if self.kind not in AGENTS:
            raise ValueError(f"agent kind must be one of {sorted(AGENTS)}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "learning_rate": schedule_to_dict(self.learning_rate),
            "exploration_epsilon": self.exploration_epsilon,
            "initial_q": self.initial_q,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        d = dict(d or {})
        kw = {}
        if "learning_rate" in d:
            kw["learning_rate"] = schedule_from_dict(d.pop("learning_rate"))
        for key in ("exploration_epsilon", "initial_q"):
            if key in d:
                kw[key] = float(d.pop(key))
        if "kind" in d:
            kw["kind"] = str(d.pop("kind"))
        if d:
            raise ValueError(f"unknown agent keys: {sorted(d)}")
        return cls(**kw)


@njit(cache=True)
def _q_learning_kernel(q, states, actions, rewards, next_states, lr, gamma):
    for i in range(states.shape[0]):
        s, a, n = states[i], actions[i], next_states[i]
        best = q[n, 0]
        for u in range(1, q.shape[1]):
            if q[n, u] > best:
                best = q[n, u]
        q[s, a] += lr * (rewards[i] + gamma * best - q[s, a])


@njit(cache=True)
def _sarsa_kernel(q, states, actions, rewards, next_states, explore, random_actions, lr, gamma):
    for i in range(states.shape[0]):
        s, a, n = states[i], actions[i], next_states[i]
        nxt_a = random_actions[i] if explore[i] else np.argmax(q[n])
        q[s, a] += lr * (rewards[i] + gamma * q[n, nxt_a] - q[s, a])


def agent_update(q: np.ndarray, states, actions, rewards, next_states, lr: float,
                 discount: float) -> np.ndarray:
    """Sequential Q-learning backups over a batch; returns a new table."""
    if not 0.0 < lr <= 1.0:
        raise ValueError(f"learning rate must be in (0, 1], got {lr}")
    out = np.array(q, dtype=float)
    _q_learning_kernel(
        out, np.asarray(states, dtype=np.int64), np.asarray(actions, dtype=np.int64),
        np.asarray(rewards, dtype=float), np.asarray(next_states, dtype=np.int64),
        float(lr), float(discount),
    )
    return out


def greedy_policy(q: np.ndarray) -> np.ndarray:
    """Per-state argmax; ties go to the lowest action index."""
    return np.argmax(q, axis=1)


def act(q: np.ndarray, s: int, epsilon: float, rng: np.random.Generator) -> int:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    n_actions = q.shape[1]
    if rng.random() < epsilon:
        return int(rng.integers(n_actions))
    return int(np.argmax(q[s]))


class Agent(Protocol):
    q: np.ndarray

    def consume(self, states, actions, rewards, next_states, k: int) -> None: ...

    def policy(self) -> np.ndarray: ...

    def act(self, s: int) -> int: ...


class QLearningAgent:
    def __init__(self, n_states: int, n_actions: int, discount: float,
                 config: AgentConfig, rng: np.random.Generator):
        self.q = np.full((n_states, n_actions), config.initial_q, dtype=float)
        self.discount = discount
        self.config = config
        self.rng = rng

    def consume(self, states, actions, rewards, next_states, k: int) -> None:
        lr = self.config.learning_rate(k)
        if lr > 0:
            _q_learning_kernel(self.q, states, actions, rewards, next_states, lr, self.discount)

    def policy(self) -> np.ndarray:
        return greedy_policy(self.q)

    def act(self, s: int) -> int:
        return act(self.q, s, self.config.exploration_epsilon, self.rng)


class SarsaAgent(QLearningAgent):
    """On-policy TD(0): bootstraps from its own epsilon-greedy choice at s'."""

    def consume(self, states, actions, rewards, next_states, k: int) -> None:
        lr = self.config.learning_rate(k)
        eps = self.config.exploration_epsilon
        n = len(states)
        explore = self.rng.random(n) < eps
        random_actions = self.rng.integers(self.q.shape[1], size=n)
        if lr > 0:
            _sarsa_kernel(self.q, states, actions, rewards, next_states, explore,
                          random_actions, lr, self.discount)


AGENTS = {"q_learning": QLearningAgent, "sarsa": SarsaAgent}


def make_agent(config: AgentConfig, n_states: int, n_actions: int, discount: float,
               rng: np.random.Generator):
    return AGENTS[config.kind](n_states, n_actions, discount, config, rng)
