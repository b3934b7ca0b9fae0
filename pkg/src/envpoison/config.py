"""Experiment configuration and its YAML file format.

A config file has up to five top-level sections::

    environment:          # exactly one of `maze` or `mdp`
      maze:
        map: |            # '#' wall, '.' free, 'G' gray, 'S' start, 'D' destination
          S....
          ...
        stay_prob: 0.7
        step_reward: -1.0
        gray_penalty: -5.0
        goal_reward: 10.0
        discount: 0.9
      mdp:                # explicit model instead of a maze
        transition: [[[...]]]   # (S, A, S)
        reward: [[...]]         # (S, A)
        discount: 0.9
        start: 0
    target:
      base: optimal       # optimal (true greedy policy) or a full action list
      path:               # [row, col, action] overrides (state index for `mdp`)
        - [1, 1, down]
    attacker:             # schedules; see Schedules.from_dict
      alpha: {kind: decay, scale: 0.5, horizon: 1000, power: 1}
      rho_delta: 2.0
      epsilon_gap: 1.0
    agent:
      kind: q_learning
      learning_rate: {kind: decay, scale: 0.5, horizon: 200, power: 1}
      exploration_epsilon: 0.1
      initial_q: 0.0
    experiment:
      iterations: 20000
      repeats: 5
      seed: 2024
      batch_regime: full-sweep     # or on-policy
      rollout_length: 120          # on-policy only
      monitored_states: [[1, 1]]   # default: (1,1) + target path; every state for `mdp`
      snapshot_interval: 100
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .agent import AgentConfig
from .maze import ACTIONS, MazeSpec, build_maze, default_maze_spec
from .mdp import TabularMdp, value_iteration
from .schedules import Schedules

BATCH_REGIMES = ("full-sweep", "on-policy")

DEFAULT_TARGET_PATH = (
    ((1, 1), "down"), ((2, 1), "down"), ((3, 1), "down"), ((4, 1), "down"),
    ((5, 1), "right"), ((5, 2), "right"), ((5, 3), "right"), ((5, 4), "right"),
    ((5, 5), "down"),
)


class ConfigError(ValueError):
    """Invalid configuration; ``str()`` names the offending field."""


def _label(x):
    return tuple(int(v) for v in x) if isinstance(x, (list, tuple)) else int(x)


@dataclass(frozen=True)
class ExperimentConfig:
    maze: Optional[MazeSpec] = field(default_factory=default_maze_spec)
    mdp: Optional[TabularMdp] = None
    start_state: int = 0
    target_base: Optional[tuple] = None
    target_path: tuple = DEFAULT_TARGET_PATH
    schedules: Schedules = field(default_factory=Schedules)
    agent: AgentConfig = field(default_factory=AgentConfig)
    iterations: int = 20_000
    repeats: int = 5
    seed: int = 2024
    batch_regime: str = "full-sweep"
    rollout_length: int = 120
    monitored_states: Optional[tuple] = None
    snapshot_interval: int = 100

    def __post_init__(self):
        if (self.maze is None) == (self.mdp is None):
            raise ConfigError("environment: give exactly one of maze or mdp")
        if self.iterations < 1:
            raise ConfigError(f"experiment.iterations must be >= 1, got {self.iterations}")
        if self.repeats < 1:
            raise ConfigError(f"experiment.repeats must be >= 1, got {self.repeats}")
        if self.snapshot_interval < 1:
            raise ConfigError("experiment.snapshot_interval must be >= 1")
        if self.batch_regime not in BATCH_REGIMES:
            raise ConfigError(f"experiment.batch_regime must be one of {BATCH_REGIMES}")
        if self.rollout_length < 1:
            raise ConfigError("experiment.rollout_length must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("experiment.seed must be a 64-bit unsigned integer")
        try:
            mdp = self.build_mdp()
        except ValueError as exc:
            raise ConfigError(f"environment: {exc}") from exc
        try:
            self.monitored_indices(mdp)
            self.target_policy(mdp)
        except (ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc

    def build_mdp(self) -> TabularMdp:
        return build_maze(self.maze) if self.maze is not None else self.mdp

    def start_index(self, mdp: TabularMdp) -> int:
        return mdp.state_index(self.maze.start) if self.maze is not None else self.start_state

    def target_policy(self, mdp: TabularMdp) -> np.ndarray:
        if self.target_base is None:
            pi = np.argmax(value_iteration(mdp), axis=1)
        else:
            pi = np.array([mdp.action_index(a) for a in self.target_base], dtype=np.int64)
            if pi.shape != (mdp.n_states,):
                raise ConfigError("target.base must list one action per state")
        for label, action in self.target_path:
            pi[mdp.state_index(label)] = mdp.action_index(action)
        return pi

    def monitored_indices(self, mdp: TabularMdp) -> list:
        labels = self.monitored_states
        if labels is None:
            labels = [label for label, _ in self.target_path]
            if self.maze is not None and (1, 1) in mdp.labels and (1, 1) not in labels:
                labels = [(1, 1)] + labels
            if not labels:
                labels = list(range(mdp.n_states))
        out = []
        for label in labels:
            idx = mdp.state_index(label)
            if idx not in out:
                out.append(idx)
        if not out:
            raise ConfigError("experiment.monitored_states is empty")
        return out

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "rho_delta" in kw:
            kw["schedules"] = replace(self.schedules, rho_delta=float(kw.pop("rho_delta")))
        return replace(self, **kw)

    def to_dict(self) -> dict:
        env = {}
        if self.maze is not None:
            m = self.maze
            env["maze"] = {
                "map": m.to_ascii(), "stay_prob": m.stay_prob, "step_reward": m.step_reward,
                "gray_penalty": m.gray_penalty, "goal_reward": m.goal_reward,
                "discount": m.discount,
            }
        else:
            env["mdp"] = {
                "transition": self.mdp.transition.tolist(), "reward": self.mdp.reward.tolist(),
                "discount": self.mdp.discount, "start": self.start_state,
            }
        target = {"base": "optimal" if self.target_base is None else list(self.target_base),
                  "path": [[*(_as_list(lab)), act] for lab, act in self.target_path]}
        exp = {
            "iterations": self.iterations, "repeats": self.repeats, "seed": self.seed,
            "batch_regime": self.batch_regime, "rollout_length": self.rollout_length,
            "snapshot_interval": self.snapshot_interval,
        }
        if self.monitored_states is not None:
            exp["monitored_states"] = [_as_list(x) for x in self.monitored_states]
        return {
            "environment": env, "target": target, "attacker": self.schedules.to_dict(),
            "agent": self.agent.to_dict(), "experiment": exp,
        }


def _as_list(label):
    return list(label) if isinstance(label, tuple) else [label]


def _section(d, name) -> dict:
    val = d.get(name) or {}
    if not isinstance(val, dict):
        raise ConfigError(f"{name}: expected a mapping")
    return dict(val)


def config_from_dict(d: dict) -> ExperimentConfig:
    if not isinstance(d, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(d) - {"environment", "target", "attacker", "agent", "experiment"}
    if unknown:
        raise ConfigError(f"unknown top-level sections: {sorted(unknown)}")
    kw = {}
    env = _section(d, "environment")
    try:
        if "maze" in env and "mdp" in env:
            raise ConfigError("environment: give exactly one of maze or mdp")
        if "mdp" in env:
            m = dict(env["mdp"])
            kw["maze"] = None
            kw["mdp"] = TabularMdp(np.array(m["transition"], dtype=float),
                                   np.array(m["reward"], dtype=float), float(m["discount"]))
            kw["start_state"] = int(m.get("start", 0))
        elif "maze" in env:
            m = dict(env["maze"])
            text = m.pop("map", None)
            params = {k: float(v) for k, v in m.items()}
            kw["maze"] = default_maze_spec(**params) if text is None else MazeSpec.from_ascii(text, **params)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"environment: {exc}") from exc

    target = _section(d, "target")
    try:
        base = target.pop("base", "optimal")
        kw["target_base"] = None if base == "optimal" else tuple(base)
        if "path" in target:
            path = []
            for entry in target.pop("path") or []:
                *label, action = entry
                path.append((_label(label) if len(label) > 1 else int(label[0]), action))
            kw["target_path"] = tuple(path)
        elif "mdp" in env:
            kw["target_path"] = ()
        if target:
            raise ConfigError(f"target: unknown keys {sorted(target)}")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"target: {exc}") from exc

    try:
        kw["schedules"] = Schedules.from_dict(_section(d, "attacker"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"attacker: {exc}") from exc
    try:
        kw["agent"] = AgentConfig.from_dict(_section(d, "agent"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"agent: {exc}") from exc

    exp = _section(d, "experiment")
    try:
        for key in ("iterations", "repeats", "seed", "rollout_length", "snapshot_interval"):
            if key in exp:
                kw[key] = int(exp.pop(key))
        if "batch_regime" in exp:
            kw["batch_regime"] = str(exp.pop("batch_regime"))
        if "monitored_states" in exp:
            kw["monitored_states"] = tuple(_label(x) for x in exp.pop("monitored_states"))
        if exp:
            raise ConfigError(f"experiment: unknown keys {sorted(exp)}")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"experiment: {exc}") from exc
    return ExperimentConfig(**kw)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(exc, 'problem', exc)}") from exc
    return config_from_dict(data or {})


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


__all__ = [
    "ACTIONS", "BATCH_REGIMES", "ConfigError", "DEFAULT_TARGET_PATH", "ExperimentConfig",
    "config_from_dict", "dump_config", "load_config",
]
