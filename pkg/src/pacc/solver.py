"""Soft (maximum-entropy) MDP solver.

Soft Bellman backup V(s) = logsumexp_a [ r(s) + gamma * E[V(s') | s, a] ]
with the stochastic policy pi(a|s) = exp(Q(s,a) - V(s)), plus discounted
state-visitation propagation for the matching gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mdp import TransitionModel


class SolverDivergence(RuntimeError):
    def __init__(self, sweep: int):
        super().__init__(f"non-finite soft values at sweep {sweep}")
        self.sweep = sweep


@dataclass
class SoftPolicy:
    policy: np.ndarray  # (n_cells, n_actions)
    values: np.ndarray  # (n_cells,)
    q_values: np.ndarray  # (n_cells, n_actions)
    sweeps: int
    converged: bool


def soft_value_iteration(
    reward: np.ndarray,
    transition: TransitionModel,
    gamma: float,
    sweeps: int,
    tol: float = 1e-6,
    values_init: np.ndarray | None = None,
) -> SoftPolicy:
    """Iterate the soft backup until the sup-norm change drops below tol or
    the sweep budget runs out. `values_init` warm-starts the iteration."""
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0, 1)")
    reward = np.asarray(reward, dtype=float).ravel()
    v = np.zeros_like(reward) if values_init is None else values_init.copy()
    q = np.empty((reward.size, transition.n_actions))
    done = 0
    converged = False
    for sweep in range(1, sweeps + 1):
        q = reward[None, :] + gamma * transition.successor_values(v)  # (n_a, n_cells)
        v_next = logsumexp(q, axis=0)
        if not np.all(np.isfinite(v_next)):
            raise SolverDivergence(sweep)
        delta = np.max(np.abs(v_next - v))
        v = v_next
        done = sweep
        if delta < tol:
            converged = True
            break
    policy = np.exp(q - v[None, :]).T  # (n_cells, n_actions)
    return SoftPolicy(policy=policy, values=v, q_values=q.T, sweeps=done,
                      converged=converged)


def soft_value_iteration_batch(
    reward: np.ndarray,
    stack,
    gamma: float,
    sweeps: int,
    tol: float = 1e-6,
    values_init: np.ndarray | None = None,
):
    """Soft VI over a TransitionStack; one shared reward vector, batched
    values of shape (L, n_cells). Returns (policy, values, sweeps, converged)
    with policy shaped (L, n_cells, n_actions)."""
    L = len(stack)
    n = reward.size
    dtype = stack.p_v.dtype
    v = np.zeros((L, n), dtype=dtype) if values_init is None else values_init.astype(dtype)
    reward = reward.astype(dtype)
    q = None
    converged = False
    done = 0
    for sweep in range(1, sweeps + 1):
        q = reward[None, None, :] + gamma * stack.successor_values(v)
        v_next = logsumexp(q, axis=1)
        if not np.all(np.isfinite(v_next)):
            raise SolverDivergence(sweep)
        delta = np.max(np.abs(v_next - v))
        v = v_next
        done = sweep
        if delta < tol:
            converged = True
            break
    policy = np.exp(np.moveaxis(q, 1, 2) - v[:, :, None])
    return policy, v, done, converged


def state_visitation_batch(
    policy: np.ndarray,
    stack,
    initial: np.ndarray,
    horizon: int,
    gamma: float,
    slice_weights: np.ndarray,
) -> np.ndarray:
    """Batched discounted visitation; slice_weights has shape (L, horizon),
    zero-padded past each level's own horizon."""
    rho = initial.copy()
    total = np.zeros_like(rho)
    for t in range(horizon):
        w = (gamma**t) * slice_weights[:, t]
        total += w[:, None] * rho
        if t + 1 < horizon and np.any(slice_weights[:, t + 1:]):
            rho = stack.push_forward(rho, policy)
        elif t + 1 < horizon:
            break
    return total


def state_visitation(
    policy: np.ndarray,
    transition: TransitionModel,
    initial: np.ndarray,
    horizon: int,
    gamma: float,
    slice_weights: np.ndarray | None = None,
    return_slices: bool = False,
):
    """Discounted expected visitation D = sum_t gamma^t * rho_t by forward
    propagation from `initial`; each undiscounted slice rho_t sums to 1.

    `slice_weights` optionally scales slice t by weights[t] (used to account
    for demonstrations of unequal length); default is all ones.
    """
    rho = np.asarray(initial, dtype=float).copy()
    total = np.zeros_like(rho)
    slices = []
    for t in range(horizon):
        w = 1.0 if slice_weights is None else float(slice_weights[t])
        sl = (gamma**t) * w * rho
        total += sl
        if return_slices:
            slices.append(sl)
        if t + 1 < horizon:
            rho = transition.push_forward(rho, policy)
    if return_slices:
        return total, slices
    return total
