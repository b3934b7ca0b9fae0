"""Ground-truth tabular MDPs: sampling, reachable sets, policy evaluation and
the transition-poisoning mixture."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

SUPPORT_TOL = 1e-12
STOCHASTIC_TOL = 1e-9


class MdpError(ValueError):
    """Raised for malformed MDPs or invalid arguments."""


class SingularSystemError(ArithmeticError):
    """The policy-evaluation linear system has no unique solution."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TabularMdp:
    """Finite MDP with transition tensor ``transition[s, a, s']`` and reward
    table ``reward[s, a]``.

    ``labels`` optionally names states (grid cells for mazes) and
    ``action_names`` names actions; both are used only for reporting.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    labels: Optional[tuple] = None
    action_names: Optional[tuple] = None
    absorbing: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        P = _frozen(self.transition)
        r = _frozen(self.reward)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MdpError(f"transition must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise MdpError(f"reward shape {r.shape} does not match transition {P.shape}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise MdpError("need at least one state and one action")
        if np.any(P < 0) or np.any(P > 1):
            raise MdpError("transition entries must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > STOCHASTIC_TOL:
            raise MdpError("transition rows must sum to 1")
        if not np.all(np.isfinite(r)):
            raise MdpError("reward entries must be finite")
        if not 0.0 <= self.discount <= 1.0:
            raise MdpError(f"discount must be in [0, 1], got {self.discount}")
        if self.labels is not None and len(self.labels) != P.shape[0]:
            raise MdpError("labels must name every state")
        if self.action_names is not None and len(self.action_names) != P.shape[1]:
            raise MdpError("action_names must name every action")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def state_index(self, label) -> int:
        if self.labels is None:
            return int(label)
        try:
            return self.labels.index(tuple(label) if isinstance(label, list) else label)
        except ValueError:
            raise MdpError(f"unknown state {label!r}") from None

    def action_index(self, name) -> int:
        if isinstance(name, (int, np.integer)):
            return int(name)
        if self.action_names is None:
            raise MdpError(f"MDP has no action names, cannot resolve {name!r}")
        try:
            return self.action_names.index(name)
        except ValueError:
            raise MdpError(f"unknown action {name!r}") from None

    def state_name(self, s: int) -> str:
        if self.labels is None:
            return str(s)
        lab = self.labels[s]
        return "_".join(str(x) for x in lab) if isinstance(lab, tuple) else str(lab)

    def action_name(self, a: int) -> str:
        return str(a) if self.action_names is None else self.action_names[a]

    def with_model(self, transition=None, reward=None) -> "TabularMdp":
        """Copy with a replaced transition tensor and/or reward table."""
        return replace(
            self,
            transition=self.transition if transition is None else transition,
            reward=self.reward if reward is None else reward,
        )

    def to_csv(self, reward_path, transition_path) -> None:
        with open(reward_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["s", "a", "r"])
            for s in range(self.n_states):
                for a in range(self.n_actions):
                    w.writerow([s, a, repr(float(self.reward[s, a]))])
        with open(transition_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["s", "a", "s_next", "p"])
            for s, a, sn in zip(*np.nonzero(self.transition > SUPPORT_TOL)):
                w.writerow([s, a, sn, repr(float(self.transition[s, a, sn]))])


@dataclass(frozen=True)
class TransitionSample:
    state: int
    action: int
    reward: float
    next_state: int


class ReachableSets:
    """Support ``S'_{s,a} = {s' : P(s'|s,a) > 0}`` of every transition row.

    Stored both as a boolean mask ``mask[s, a, s']`` and as a padded index
    table ``index[s, a, :size[s, a]]`` (sorted ascending), the latter being
    what the compiled kernels consume.
    """

    def __init__(self, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        size = mask.sum(axis=2)
        if np.any(size == 0):
            raise MdpError("every reachable set must be non-empty")
        index = np.full(mask.shape, -1, dtype=np.int64)
        for s in range(mask.shape[0]):
            for a in range(mask.shape[1]):
                nz = np.flatnonzero(mask[s, a])
                index[s, a, : nz.size] = nz
        self.mask = mask
        self.size = size.astype(np.int64)
        self.index = index
        self.uniform = mask / size[..., None]
        for arr in (self.mask, self.size, self.index, self.uniform):
            arr.setflags(write=False)

    def __getitem__(self, sa) -> list:
        s, a = sa
        return [int(x) for x in self.index[s, a, : self.size[s, a]]]

    def __eq__(self, other):
        return isinstance(other, ReachableSets) and np.array_equal(self.mask, other.mask)

    def __repr__(self):
        return f"ReachableSets(shape={self.mask.shape})"


def reachable_sets(mdp: TabularMdp) -> ReachableSets:
    return ReachableSets(mdp.transition > SUPPORT_TOL)


def _check_index(mdp: TabularMdp, s: int, a: int) -> None:
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range")
    if not 0 <= a < mdp.n_actions:
        raise IndexError(f"action {a} out of range")


def draw_next_states(transition: np.ndarray, states, actions, uniforms) -> np.ndarray:
    """Inverse-CDF draws of next states for paired (state, action) arrays."""
    cdf = np.cumsum(transition[states, actions], axis=-1)
    nxt = (np.asarray(uniforms)[..., None] >= cdf).sum(axis=-1)
    # rows summing to 1 - 1e-16 can push a draw past the last index
    nxt = np.minimum(nxt, transition.shape[2] - 1)
    # never land on a zero-probability state left of the clip
    bad = transition[states, actions, nxt] <= SUPPORT_TOL
    if np.any(bad):
        rows = transition[states, actions]
        last = transition.shape[2] - 1 - np.argmax((rows > SUPPORT_TOL)[..., ::-1], axis=-1)
        nxt = np.where(bad, last, nxt)
    return nxt.astype(np.int64)


def sample_transition(mdp: TabularMdp, s: int, a: int, rng: np.random.Generator) -> TransitionSample:
    _check_index(mdp, s, a)
    nxt = draw_next_states(mdp.transition, np.array([s]), np.array([a]), rng.random(1))
    return TransitionSample(int(s), int(a), float(mdp.reward[s, a]), int(nxt[0]))


def sample_sweep(mdp: TabularMdp, rng: np.random.Generator):
    """One sample per (s, a) pair in row-major order, as parallel arrays."""
    S, A = mdp.n_states, mdp.n_actions
    states = np.repeat(np.arange(S, dtype=np.int64), A)
    actions = np.tile(np.arange(A, dtype=np.int64), S)
    nxt = draw_next_states(mdp.transition, states, actions, rng.random(S * A))
    return states, actions, mdp.reward[states, actions].copy(), nxt


def _policy_array(mdp: TabularMdp, policy) -> np.ndarray:
    pi = np.asarray(policy, dtype=np.int64)
    if pi.shape != (mdp.n_states,):
        raise MdpError(f"policy must assign one action per state, got shape {pi.shape}")
    if np.any(pi < 0) or np.any(pi >= mdp.n_actions):
        raise MdpError("policy action out of range")
    return pi


def policy_successor_matrix(transition: np.ndarray, policy: np.ndarray) -> np.ndarray:
    """Matrix M with (Mq)[s,a] = sum_s' P(s'|s,a) q[s', pi(s')], on flattened (s,a)."""
    S, A, _ = transition.shape
    M = np.zeros((S * A, S * A))
    cols = np.arange(S) * A + policy
    M[:, cols] = transition.reshape(S * A, S)
    return M


def exact_policy_q(mdp: TabularMdp, policy: Sequence[int]) -> np.ndarray:
    """Q of a deterministic policy by a direct solve of the Bellman system."""
    pi = _policy_array(mdp, policy)
    S, A = mdp.n_states, mdp.n_actions
    lhs = np.eye(S * A) - mdp.discount * policy_successor_matrix(mdp.transition, pi)
    try:
        q = np.linalg.solve(lhs, mdp.reward.reshape(-1))
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"policy evaluation is singular: {exc}") from exc
    if not np.all(np.isfinite(q)) or np.linalg.cond(lhs) > 1e12:
        raise SingularSystemError("policy evaluation is ill-conditioned")
    return q.reshape(S, A)


def bellman_residual(mdp: TabularMdp, q: np.ndarray, policy) -> np.ndarray:
    pi = _policy_array(mdp, policy)
    v = q[np.arange(mdp.n_states), pi]
    return q - mdp.reward - mdp.discount * mdp.transition @ v


def value_iteration(mdp: TabularMdp, tol: float = 1e-12, max_iters: int = 100_000) -> np.ndarray:
    """Optimal Q by repeated Bellman optimality backups."""
    q = np.zeros_like(mdp.reward)
    for _ in range(max_iters):
        q_new = mdp.reward + mdp.discount * mdp.transition @ q.max(axis=1)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    return q


def apply_delta(mdp: TabularMdp, delta: np.ndarray, reach: ReachableSets) -> np.ndarray:
    """Poisoned kernel (1 - delta) P + delta * Uniform(S'_{s,a})."""
    delta = np.asarray(delta, dtype=float)
    if delta.shape != mdp.reward.shape:
        raise MdpError(f"delta shape {delta.shape} does not match {mdp.reward.shape}")
    if np.any(delta < 0) or np.any(delta > 1) or not np.all(np.isfinite(delta)):
        raise MdpError("delta entries must lie in [0, 1]")
    d = delta[..., None]
    return (1.0 - d) * mdp.transition + d * reach.uniform


def write_q_csv(path, q: np.ndarray, column: str = "q") -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["s", "a", column])
        for s in range(q.shape[0]):
            for a in range(q.shape[1]):
                w.writerow([s, a, repr(float(q[s, a]))])

