"""Finite-difference checks of the analytic derivatives in :mod:`oracle`.

Each check draws random points ``(delta, q_bar)`` on a random MDP, compares
an analytic derivative with central differences of the function it claims
to differentiate, and reports the worst relative error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .mdp import TabularMdp, reachable_sets

STEP = 1e-5
REL_TOL = 1e-5
ABS_FLOOR = 1e-8


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator,
               discount: float = 0.9, sparsity: float = 0.3) -> TabularMdp:
    """Random MDP whose rows each keep at least one reachable state."""
    P = rng.random((n_states, n_actions, n_states))
    P[rng.random(P.shape) < sparsity] = 0.0
    rows, cols = np.nonzero(P.sum(axis=2) == 0)
    P[rows, cols, rng.integers(n_states, size=rows.size)] = 1.0
    P /= P.sum(axis=2, keepdims=True)
    return TabularMdp(P, rng.normal(size=(n_states, n_actions)), discount)


def relative_error(analytic, numeric) -> float:
    """Worst entrywise ``|a - f| / max(|a|, |f|)``.

    Entries smaller than ``ABS_FLOOR / REL_TOL`` are scaled by that bound
    instead, so an absolute error below ``ABS_FLOOR`` always passes.
    """
    a, f = np.asarray(analytic, dtype=float), np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(a), np.abs(f)), ABS_FLOOR / REL_TOL)
    err = np.abs(a - f) / scale
    return float(err.max()) if err.size else 0.0


def central_difference(fn, x: np.ndarray, lo=None, hi=None) -> np.ndarray:
    """Central differences of ``fn`` (scalar- or array-valued) in every entry
    of ``x``; output shape is ``fn(x).shape + x.shape``."""
    x = np.asarray(x, dtype=float)
    out = None
    for idx in np.ndindex(x.shape):
        h = STEP * max(1.0, abs(x[idx]))
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        if lo is not None:
            xm[idx] = max(xm[idx], lo)
        if hi is not None:
            xp[idx] = min(xp[idx], hi)
        d = (np.asarray(fn(xp)) - np.asarray(fn(xm))) / (xp[idx] - xm[idx])
        if out is None:
            out = np.zeros(d.shape + x.shape)
        out[(...,) + idx] = d
    return out


@dataclass
class CheckPoint:
    mdp: TabularMdp
    reach: object
    target: np.ndarray
    delta: np.ndarray
    q_bar: np.ndarray
    r_bar: np.ndarray
    params: oracle.PenaltyParams


def near_kink(point: CheckPoint, margin: float) -> bool:
    x, mask = oracle._gap_args(point.q_bar, point.target, point.params.eps)
    return bool(np.any(np.abs(x[mask]) < margin))


def draw_point(mdp: TabularMdp, rng: np.random.Generator, params=None) -> CheckPoint:
    """Random interior point away from the hinge kinks."""
    reach = reachable_sets(mdp)
    params = params or oracle.PenaltyParams(2.0, 3.0, 1.0)
    S, A = mdp.n_states, mdp.n_actions
    while True:
        point = CheckPoint(
            mdp, reach, rng.integers(A, size=S),
            rng.uniform(0.05, 0.95, size=(S, A)),
            rng.normal(scale=2.0, size=(S, A)),
            rng.normal(size=(S, A)), params,
        )
        if not near_kink(point, 10 * STEP * max(1.0, np.abs(point.q_bar).max())):
            return point


def _check_lower_gradient(p: CheckPoint) -> float:
    fn = lambda r: oracle.eval_g(r, p.delta, p.q_bar, p.mdp, p.reach, p.target)
    return relative_error(oracle.grad_g_r(p.r_bar, p.delta, p.q_bar, p.mdp, p.reach, p.target),
                          central_difference(fn, p.r_bar))


def _check_intensity_jacobian(p: CheckPoint) -> float:
    fn = lambda d: oracle.lower_solution(d, p.q_bar, p.mdp, p.reach, p.target)
    full = central_difference(fn, p.delta, lo=0.0, hi=1.0)
    S, A = p.delta.shape
    analytic = np.zeros((S, A, S, A))
    analytic[np.arange(S)[:, None], np.arange(A), np.arange(S)[:, None], np.arange(A)] = \
        oracle.grad_r_wrt_delta(p.delta, p.q_bar, p.mdp, p.reach, p.target)
    return relative_error(analytic, full)


def _check_q_jacobian(p: CheckPoint) -> float:
    fn = lambda q: oracle.lower_solution(p.delta, q, p.mdp, p.reach, p.target)
    return relative_error(oracle.grad_r_wrt_q(p.delta, p.mdp, p.reach, p.target),
                          central_difference(fn, p.q_bar))


def _check_upper_q(p: CheckPoint) -> float:
    fn = lambda q: oracle.eval_F_total(p.delta, q, p.mdp, p.params, p.reach, p.target)
    return relative_error(oracle.grad_F_q(p.delta, p.q_bar, p.mdp, p.params, p.reach, p.target),
                          central_difference(fn, p.q_bar))


def _check_upper_delta(p: CheckPoint) -> float:
    fn = lambda d: oracle.eval_F_total(d, p.q_bar, p.mdp, p.params, p.reach, p.target)
    return relative_error(oracle.grad_F_delta(p.delta, p.q_bar, p.mdp, p.params, p.reach, p.target),
                          central_difference(fn, p.delta, lo=0.0, hi=1.0))


CHECKS = {
    "lower gradient d g / d r_bar": _check_lower_gradient,
    "lower solution d r_bar / d delta": _check_intensity_jacobian,
    "lower solution d r_bar / d q_bar": _check_q_jacobian,
    "upper gradient d F / d q_bar": _check_upper_q,
    "upper gradient d F / d delta": _check_upper_delta,
}


def run_gradcheck(seed: int = 0, n_points: int = 20, n_states: int = 4, n_actions: int = 3,
                  corrupt: bool = False) -> dict:
    """Worst relative error of every check over ``n_points`` random points.

    ``corrupt`` flips the sign of the intensity Jacobian, as a negative
    control that the checks can fail.
    """
    rng = np.random.default_rng(seed)
    mdp = random_mdp(n_states, n_actions, rng)
    worst = dict.fromkeys(CHECKS, 0.0)
    original = oracle.grad_r_wrt_delta
    if corrupt:
        oracle.grad_r_wrt_delta = lambda *a, **k: -original(*a, **k)
    try:
        for _ in range(n_points):
            point = draw_point(mdp, rng)
            for name, check in CHECKS.items():
                worst[name] = max(worst[name], check(point))
    finally:
        oracle.grad_r_wrt_delta = original
    return worst
