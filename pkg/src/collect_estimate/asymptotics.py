"""Large-population behaviour: the mean-field map and the certainty threshold.

As the population grows the empirical distribution concentrates around the
deterministic recursion ``p' = sum_s p(s) T(.|s, p)``.  Estimating with that
recursion and never collecting costs at most a quantity that shrinks like
``1/sqrt(n)``; when collection is more expensive than that bound, never
collecting is the better plan.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .chain_dynamics import DistributionSpace, LocalKernel


class AssumptionViolated(ValueError):
    pass


class MeanFieldOperator:
    """``T_bar(p) = sum_s p(s) T(.|s, p)``."""

    def __init__(self, local: LocalKernel):
        self.local = local

    @property
    def decoupled(self) -> bool:
        return not self.local.coupled

    def __call__(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return p @ self.local.at(p)

    def step_batch(self, ps: np.ndarray) -> np.ndarray:
        ps = np.atleast_2d(np.asarray(ps, dtype=float))
        if self.decoupled:
            return ps @ self.local.matrices
        return np.stack([p @ self.local.at(p) for p in ps])


def mean_field_step(p, op: MeanFieldOperator) -> np.ndarray:
    """One application of the mean-field map (no renormalization)."""
    return op(p)


def infinite_population_estimate(m1, t: int, op: MeanFieldOperator) -> np.ndarray:
    """``T_bar`` composed ``t - 1`` times, applied to ``m1``."""
    if t < 1:
        raise ValueError("t must be >= 1")
    p = np.asarray(m1, dtype=float)
    for _ in range(t - 1):
        p = op(p)
    return p


def certainty_threshold(K_c: float, K_p: float, gamma: float, noise_term: float) -> float:
    """``gamma K_c / ((1 - gamma)(1 - gamma K_p)) * noise_term``.

    ``noise_term`` is the ``C / sqrt(n)`` coefficient of the one-step
    concentration error.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if gamma * K_p >= 1:
        raise AssumptionViolated(f"contraction assumption violated: gamma*K_p = {gamma * K_p:.4g} >= 1")
    if noise_term < 0 or K_c < 0:
        raise ValueError("K_c and noise_term must be nonnegative")
    return gamma * K_c / ((1 - gamma) * (1 - gamma * K_p)) * noise_term


def recommend_estimate_only(threshold: float, collection_cost: float) -> bool:
    """Advisory: never collect when one collection costs at least the threshold."""
    return collection_cost >= threshold


@dataclass
class LipschitzEstimate:
    K_T: float
    K_c: float
    K_p: float
    grid_resolution: int
    grid_points: int
    norm: str = "inf"


def _norm(d: np.ndarray, norm: str) -> np.ndarray:
    if norm == "inf":
        return np.abs(d).max(axis=-1)
    if norm == "l1":
        return np.abs(d).sum(axis=-1)
    raise ValueError("norm must be 'inf' or 'l1'")


def estimate_lipschitz_constants(local: LocalKernel, cost, resolution: int = 10,
                                 norm: str = "inf") -> LipschitzEstimate:
    """Grid lower bounds on the kernel, cost and mean-field Lipschitz constants.

    The grid is every pmf with denominators ``resolution``.  ``K_c`` is the
    Lipschitz constant of ``c(., m_hat, 0)`` with the estimate held fixed.
    These are finite-difference maxima, hence lower bounds, not certificates.
    """
    grid = DistributionSpace(resolution, local.space).probs
    G = len(grid)
    i, j = np.triu_indices(G, k=1)
    dist = _norm(grid[i] - grid[j], norm)

    mats = np.stack([local.at(p) for p in grid])
    K_T = float((np.abs(mats[i] - mats[j]).max(axis=(1, 2)) / dist).max()) if G > 1 else 0.0

    op = MeanFieldOperator(local)
    images = np.stack([op(p) for p in grid])
    K_p = float((_norm(images[i] - images[j], norm) / dist).max()) if G > 1 else 0.0

    K_c = 0.0
    for h in grid:
        vals = np.asarray(cost(grid, h[None, :], 0), dtype=float)
        K_c = max(K_c, float((np.abs(vals[i] - vals[j]) / dist).max()) if G > 1 else 0.0)
    return LipschitzEstimate(K_T, K_c, K_p, resolution, G, norm)


def _binary_decoupled_paths(T: np.ndarray, n: int, m1: np.ndarray, steps: int, paths: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Count-level simulation of a decoupled chain; returns pmfs ``(steps, paths, |S|)``."""
    scaled = m1 * n
    rounded = np.round(scaled)
    if np.abs(scaled - rounded).max() > 1e-9 or rounded.sum() != n or rounded.min() < 0:
        raise ValueError("m1 must lie in M(n)")
    counts = np.broadcast_to(rounded.astype(np.int64), (paths, len(m1))).copy()
    out = np.empty((steps, paths, len(m1)))
    out[0] = counts / n
    for t in range(1, steps):
        counts = rng.multinomial(counts, T).sum(axis=1)
        out[t] = counts / n
    return out


def fit_noise_constant(local: LocalKernel, n: int, m1, steps: int = 30, paths: int = 10_000,
                       seed: int = 0, norm: str = "inf") -> float:
    """``sqrt(n) * max_t E||m_{t+1} - T_bar(m_t)||`` from simulated paths.

    This is the constant ``C`` in the one-step bound
    ``E||m_{t+1} - m_hat_{t+1}|| <= K_p E||m_t - m_hat_t|| + C / sqrt(n)``.
    """
    if local.coupled:
        raise ValueError("the count-level fit needs decoupled dynamics")
    rng = np.random.default_rng(seed)
    ms = _binary_decoupled_paths(local.matrices, n, np.asarray(m1, dtype=float), steps + 1,
                                 paths, rng)
    pred = ms[:-1] @ local.matrices
    err = _norm(ms[1:] - pred, norm).mean(axis=1)
    return float(math.sqrt(n) * err.max())


def estimator_only_cost(local: LocalKernel, n: int, m1, cost, gamma: float,
                        steps: int | None = None, paths: int = 10_000,
                        seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo discounted cost of never collecting, estimating with the mean-field map.

    Returns ``(mean, standard error)``.
    """
    if local.coupled:
        raise ValueError("the count-level simulation needs decoupled dynamics")
    if steps is None:
        steps = math.ceil(math.log(1e-8) / math.log(gamma))
    rng = np.random.default_rng(seed)
    m1 = np.asarray(m1, dtype=float)
    ms = _binary_decoupled_paths(local.matrices, n, m1, steps, paths, rng)
    op = MeanFieldOperator(local)
    est = m1
    J = np.zeros(paths)
    for t in range(steps):
        J += gamma**t * np.asarray(cost(ms[t], est[None, :], 0), dtype=float)
        est = op(est)
    return float(J.mean()), float(J.std(ddof=1) / math.sqrt(paths))


@dataclass
class ThresholdReport:
    n: int
    K_c: float
    K_p: float
    gamma: float
    C_fit: float
    threshold: float
    collection_cost: float
    recommend_estimate_only: bool

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def threshold_report(local: LocalKernel, cost, n: int, m1, gamma: float,
                     collection_cost: float, C: float | None = None, resolution: int = 10,
                     paths: int = 10_000, seed: int = 0) -> ThresholdReport:
    """Fit (or take) the noise constant, bound the estimate-only cost, and compare."""
    lip = estimate_lipschitz_constants(local, cost, resolution)
    C_fit = fit_noise_constant(local, n, m1, paths=paths, seed=seed) if C is None else float(C)
    thr = certainty_threshold(lip.K_c, lip.K_p, gamma, C_fit / math.sqrt(n))
    return ThresholdReport(n, lip.K_c, lip.K_p, gamma, C_fit, thr, float(collection_cost),
                           recommend_estimate_only(thr, collection_cost))
