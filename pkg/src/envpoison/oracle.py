"""Exact white-box mathematics of the poisoning problem.

With the true kernel ``P`` in hand, everything the stochastic attacker only
samples can be evaluated exactly:

* lower level   ``g(r_bar) = 1/2 sum (r_bar - q_bar + gamma P_delta q_bar_pi)^2``
  with closed-form minimiser ``r_bar(delta, q_bar) = q_bar - gamma P_delta q_bar_pi``;
* upper level   ``F = 1/2 sum (r_bar - r)^2 + rho_delta/2 sum delta^2
  + rho_phi/2 sum_{a != target} phi(q_bar[s,a] + eps - q_bar[s,target])^2``;
* all first derivatives, in exact and conjugate form (``r_bar_plug`` replaces
  the lower-level solution by a given table).

Here ``q_bar_pi[s'] = q_bar[s', target(s')]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .attacker import AttackerState, phi
from .mdp import ReachableSets, TabularMdp, apply_delta, bellman_residual, reachable_sets
from .schedules import Schedules

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    """An iterate left the region ``|entry| <= 1e6``."""


@dataclass(frozen=True)
class PenaltyParams:
    rho_delta: float
    rho_phi: float
    eps: float

    def __post_init__(self):
        if min(self.rho_delta, self.rho_phi, self.eps) <= 0:
            raise ValueError("penalty parameters must be positive")


def _target_values(q_bar, target):
    return q_bar[np.arange(q_bar.shape[0]), target]


def _gap_args(q_bar, target, eps):
    """``q_bar[s, a] + eps - q_bar[s, target(s)]``, masked to ``a != target(s)``."""
    x = q_bar + eps - _target_values(q_bar, target)[:, None]
    mask = np.ones(q_bar.shape, dtype=bool)
    mask[np.arange(q_bar.shape[0]), target] = False
    return x, mask


def lower_solution(delta, q_bar, mdp: TabularMdp, reach: ReachableSets, target) -> np.ndarray:
    Pd = apply_delta(mdp, delta, reach)
    return q_bar - mdp.discount * Pd @ _target_values(q_bar, target)


def grad_g_r(r_bar, delta, q_bar, mdp, reach, target) -> np.ndarray:
    return r_bar - lower_solution(delta, q_bar, mdp, reach, target)


def eval_g(r_bar, delta, q_bar, mdp, reach, target) -> float:
    return 0.5 * float(np.sum(grad_g_r(r_bar, delta, q_bar, mdp, reach, target) ** 2))


def eval_F(delta, q_bar, r_bar, mdp: TabularMdp, params: PenaltyParams, target) -> float:
    x, mask = _gap_args(q_bar, target, params.eps)
    return (
        0.5 * float(np.sum((r_bar - mdp.reward) ** 2))
        + 0.5 * params.rho_delta * float(np.sum(np.asarray(delta) ** 2))
        + 0.5 * params.rho_phi * float(np.sum(phi(x[mask]) ** 2))
    )


def eval_F_total(delta, q_bar, mdp, params, reach, target) -> float:
    """Upper objective with the lower level solved exactly."""
    r_bar = lower_solution(delta, q_bar, mdp, reach, target)
    return eval_F(delta, q_bar, r_bar, mdp, params, target)


def grad_r_wrt_delta(delta, q_bar, mdp, reach, target) -> np.ndarray:
    """Diagonal of d r_bar[s,a] / d delta[s,a]; off-diagonal terms vanish.

    ``gamma * sum_s' (P(s'|s,a) - U_{s,a}(s')) q_bar_pi[s']``, independent of
    ``delta`` because the lower solution is affine in it.
    """
    v = _target_values(q_bar, target)
    return mdp.discount * (mdp.transition - reach.uniform) @ v


def grad_r_wrt_q(delta, mdp, reach, target) -> np.ndarray:
    """Jacobian ``J[s, a, s~, a~] = d r_bar[s,a] / d q_bar[s~,a~]``.

    Equals ``1(s~=s, a~=a) - 1(a~=target(s~)) gamma P_delta(s~|s,a)``.
    """
    S, A = mdp.n_states, mdp.n_actions
    Pd = apply_delta(mdp, delta, reach)
    J = np.zeros((S, A, S, A))
    J[:, :, np.arange(S), target] = -mdp.discount * Pd
    J[np.arange(S)[:, None], np.arange(A)[None, :], np.arange(S)[:, None], np.arange(A)[None, :]] += 1.0
    return J


def _deviation(delta, q_bar, mdp, reach, target, r_bar_plug):
    r_bar = lower_solution(delta, q_bar, mdp, reach, target) if r_bar_plug is None else r_bar_plug
    return np.asarray(r_bar) - mdp.reward


def grad_F_q(delta, q_bar, mdp: TabularMdp, params: PenaltyParams, reach, target,
             r_bar_plug=None) -> np.ndarray:
    """Gradient of the upper objective in ``q_bar``.

    ``r_bar_plug=None`` gives the exact hypergradient of
    ``F(delta, q_bar, r_bar(delta, q_bar))``; passing a table gives the
    conjugate gradient used by the single-loop method.
    """
    dev = _deviation(delta, q_bar, mdp, reach, target, r_bar_plug)
    S = mdp.n_states
    Pd = apply_delta(mdp, delta, reach)
    x, mask = _gap_args(q_bar, target, params.eps)
    pen = params.rho_phi * np.where(mask, phi(x), 0.0)
    grad = dev + pen
    inflow = np.einsum("sat,sa->t", Pd, dev)
    grad[np.arange(S), target] -= mdp.discount * inflow + pen.sum(axis=1)
    return grad


def grad_F_delta(delta, q_bar, mdp: TabularMdp, params: PenaltyParams, reach, target,
                 r_bar_plug=None) -> np.ndarray:
    dev = _deviation(delta, q_bar, mdp, reach, target, r_bar_plug)
    v = _target_values(q_bar, target)
    true_succ = mdp.transition @ v
    unif_succ = reach.uniform @ v
    return (
        dev * mdp.discount * true_succ
        + params.rho_delta * np.asarray(delta)
        - dev * mdp.discount * unif_succ
    )


@dataclass
class ConstraintResiduals:
    """``bellman_residual[s, a] = q_bar - r_bar - gamma P_delta q_bar_pi`` and
    ``gap_margin[s, a] = q_bar[s, target] - q_bar[s, a] - eps`` (NaN on the
    target action itself)."""

    bellman_residual: np.ndarray
    gap_margin: np.ndarray

    @property
    def max_bellman(self) -> float:
        return float(np.max(np.abs(self.bellman_residual)))

    @property
    def min_gap(self) -> float:
        m = self.gap_margin[~np.isnan(self.gap_margin)]
        return float(np.min(m)) if m.size else float("inf")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["s", "a", "bellman_residual", "gap_margin"])
            for s in range(self.gap_margin.shape[0]):
                for a in range(self.gap_margin.shape[1]):
                    gm = self.gap_margin[s, a]
                    w.writerow([s, a, repr(float(self.bellman_residual[s, a])),
                                "" if np.isnan(gm) else repr(float(gm))])


def check_constraints(state: AttackerState, mdp: TabularMdp, reach: ReachableSets,
                      eps: float, q_bar=None) -> ConstraintResiduals:
    """Residuals of the shifted Bellman equalities and value-gap inequalities.

    ``q_bar`` overrides ``state.q_bar``, e.g. with the exact Q of the target
    policy on the poisoned model.
    """
    q = state.q_bar if q_bar is None else np.asarray(q_bar)
    poisoned = mdp.with_model(transition=apply_delta(mdp, state.delta, reach), reward=state.r_bar)
    res = bellman_residual(poisoned, q, state.target_policy)
    x, mask = _gap_args(q, state.target_policy, eps)
    return ConstraintResiduals(res, np.where(mask, -x, np.nan))


def poisoned_model(state: AttackerState, mdp: TabularMdp, reach: ReachableSets) -> TabularMdp:
    """The MDP the victim effectively learns in: rewards ``r_bar``, kernel ``P_delta``."""
    return mdp.with_model(transition=apply_delta(mdp, state.delta, reach), reward=state.r_bar)


def whitebox_attack(mdp: TabularMdp, target_policy, schedules: Schedules, max_iters: int,
                    reach: ReachableSets = None, grad_tol: float = 1e-8) -> AttackerState:
    """Deterministic full-gradient counterpart of the online attack.

    Same initialisation, ordering and schedules as the sampled algorithm, but
    every step uses the exact gradient with the true kernel. Stops after
    ``max_iters`` iterations or once the combined gradient norm drops below
    ``grad_tol``.
    """
    reach = reachable_sets(mdp) if reach is None else reach
    state = AttackerState.initial(mdp, target_policy)
    target = state.target_policy
    for k in range(max_iters):
        alpha, beta, lam, rho_phi = schedules.at(k)
        params = PenaltyParams(schedules.rho_delta, rho_phi, schedules.epsilon_gap)
        g_r = grad_g_r(state.r_bar, state.delta, state.q_bar, mdp, reach, target)
        state.r_bar = state.r_bar - alpha * g_r
        g_q = grad_F_q(state.delta, state.q_bar, mdp, params, reach, target, r_bar_plug=state.r_bar)
        state.q_bar = state.q_bar - beta * g_q
        g_d = grad_F_delta(state.delta, state.q_bar, mdp, params, reach, target, r_bar_plug=state.r_bar)
        # projected-gradient stationarity, not the raw gradient, at the box faces
        new_delta = np.clip(state.delta - lam * g_d, 0.0, 1.0)
        g_d_eff = np.where((new_delta == state.delta) & (lam > 0), 0.0, g_d)
        state.delta = new_delta
        if state.max_abs() > DIVERGENCE_LIMIT:
            raise DivergenceError(f"white-box attack diverged at iteration {k}")
        norm = np.sqrt(np.sum(g_r ** 2) + np.sum(g_q ** 2) + np.sum(g_d_eff ** 2))
        if norm < grad_tol:
            logger.debug("white-box attack converged at iteration %d", k)
            break
    return state
