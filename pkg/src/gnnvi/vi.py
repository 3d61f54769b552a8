"""Exact synchronous value iteration and the two evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import Mdp

ORACLE_TOL = 1e-8
TIE_EPS = 1e-9


def _check_len(mdp: Mdp, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != mdp.num_states:
        raise ValueError(f"value vector has length {v.shape[-1]}, MDP has {mdp.num_states} states")
    return v


def q_values(mdp: Mdp, v) -> np.ndarray:
    """``Q[s, a] = r(s, a) + gamma * sum_s' p(s'|s,a) v(s')``."""
    v = _check_len(mdp, v)
    pv = (mdp.transition_matrix @ v).reshape(mdp.num_actions, mdp.num_states)
    return mdp.rewards + mdp.gamma * pv.T


def vi_step(mdp: Mdp, v) -> np.ndarray:
    """One Bellman optimality backup."""
    return q_values(mdp, v).max(axis=1)


@dataclass
class ViTrajectory:
    steps: list[np.ndarray]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.steps) - 1

    @property
    def final(self) -> np.ndarray:
        return self.steps[-1]


def solve(mdp: Mdp, tolerance: float = ORACLE_TOL, max_iters: int = 10_000) -> ViTrajectory:
    """Iterate from ``v = 0`` until the max-norm change drops below ``tolerance``."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    v = np.zeros(mdp.num_states)
    steps = [v]
    for _ in range(max_iters):
        nv = vi_step(mdp, v)
        steps.append(nv)
        if np.max(np.abs(nv - v)) < tolerance:
            return ViTrajectory(steps, True)
        v = nv
    return ViTrajectory(steps, False)


def iteration_bound(gamma: float, tolerance: float, r_max: float) -> int:
    """Steps after which the contraction guarantees a change below ``tolerance``."""
    if r_max <= 0:
        return 1
    return int(np.ceil(np.log(tolerance * (1 - gamma) / r_max) / np.log(gamma)))


def greedy_policy(mdp: Mdp, v, tie_eps: float = TIE_EPS) -> tuple[np.ndarray, list[frozenset[int]]]:
    """Greedy actions (lowest index among ties) and the tied-optimal action sets."""
    return greedy_from_q(q_values(mdp, v), tie_eps)


def greedy_from_q(q: np.ndarray, tie_eps: float = TIE_EPS) -> tuple[np.ndarray, list[frozenset[int]]]:
    best = q.max(axis=1, keepdims=True)
    tied = q >= best - tie_eps
    actions = np.argmax(tied, axis=1)
    sets = [frozenset(np.flatnonzero(row).tolist()) for row in tied]
    return actions, sets


def policy_accuracy(mdp: Mdp, v_pred, v_star, tie_eps: float = TIE_EPS) -> float:
    """Fraction of states whose greedy action under ``v_pred`` is optimal under ``v_star``."""
    pred_actions, _ = greedy_policy(mdp, v_pred, tie_eps)
    q_star = q_values(mdp, v_star)
    ok = q_star[np.arange(mdp.num_states), pred_actions] >= q_star.max(axis=1) - tie_eps
    return float(ok.mean())


def value_mse(v_pred, v_star) -> float:
    v_pred = np.asarray(v_pred, dtype=np.float64)
    v_star = np.asarray(v_star, dtype=np.float64)
    if v_pred.shape != v_star.shape:
        raise ValueError(f"shape mismatch {v_pred.shape} vs {v_star.shape}")
    return float(np.mean((v_pred - v_star) ** 2))
