"""Model-based alternative to Q-learning for decoupled i.i.d. node dynamics.

Collect data, estimate the single-node kernel and the credibility
probability from the credible observations, then plan on the estimated model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain_dynamics import LocalKernel, build_kernel_exact
from .learning import BLANK
from .planning import ValueTable, value_iteration, truncation_index


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, v.shape[1] + 1)
    rho = (u - css / idx > 0).sum(axis=1)
    theta = css[np.arange(len(v)), rho - 1] / rho
    return np.maximum(v - theta[:, None], 0.0)


def fit_decoupled_kernel(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Least-squares fit of ``after ~ before @ T`` with row-stochastic ``T``.

    ``before`` and ``after`` are ``(N, |S|)`` arrays of consecutive
    empirical distributions.  For a single node this reduces to transition
    frequencies.  States never seen in ``before`` keep an identity row.
    """
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    S = before.shape[1]
    T, *_ = np.linalg.lstsq(before, after, rcond=None)
    T = project_to_simplex(T)
    unseen = before.sum(axis=0) == 0
    T[unseen] = np.eye(S)[unseen]
    return T


def estimate_credibility(actions, observations) -> float:
    """Fraction of collections that produced a credible observation."""
    a = np.asarray(actions).astype(bool)
    if not a.any():
        raise ValueError("no collections to estimate credibility from")
    return float((np.asarray(observations)[a] != BLANK).mean())


@dataclass
class ModelBasedResult:
    T_hat: np.ndarray
    q_hat: float
    table: ValueTable
    samples: int


def learn_model_based(world, steps: int, cost, estimator, gamma: float,
                      k: int | None = None, eps: float = 1e-3) -> ModelBasedResult:
    """Always collect for ``steps`` steps, fit the model, and plan on it.

    ``world`` is a :class:`~collect_estimate.simulation.ChainWorld`; all its
    paths contribute data.
    """
    ds = world.dspace
    probs = ds.probs
    before, after, acts, obs_all = [], [], [], []
    prev_obs = np.asarray(world.m).copy()
    prev_ok = np.ones(world.paths, dtype=bool)
    for _ in range(steps):
        a = np.ones(world.paths, dtype=np.int64)
        obs = world.step(a)
        ok = obs != BLANK
        both = prev_ok & ok
        before.append(probs[prev_obs[both]])
        after.append(probs[obs[both]])
        acts.append(a)
        obs_all.append(obs)
        prev_obs, prev_ok = np.where(ok, obs, prev_obs), ok
    before, after = np.concatenate(before), np.concatenate(after)
    T_hat = fit_decoupled_kernel(before, after)
    q_hat = estimate_credibility(np.concatenate(acts), np.concatenate(obs_all))
    kernel = build_kernel_exact(LocalKernel.decoupled(ds.space, T_hat), dspace=ds)
    if k is None:
        c_max = getattr(cost, "c_max", None) or 1.0
        k = truncation_index(eps, gamma, c_max)
    table = value_iteration(kernel, cost, estimator, q_hat, gamma, k)
    return ModelBasedResult(T_hat, q_hat, table, len(before))
