"""Estimators mapping the conditional law of the current data to an estimate.

Given the last credible observation ``x`` and ``y`` blanks since, the law of
the current empirical distribution is row ``x`` of ``T_m^y``.  An estimator
turns that row into a probability vector over S (the estimate ``m_hat``).
"""

from __future__ import annotations

import numpy as np

from .chain_dynamics import DistributionSpace, EmpiricalDistribution, TransitionKernel

# relative slack when deciding that two atoms tie for the maximum
_TIE_RTOL = 1e-12


def _first_argmax(rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(rows)
    top = rows.max(axis=1, keepdims=True)
    return np.argmax(rows >= top * (1.0 - _TIE_RTOL), axis=1)


def map_estimator(row, dspace: DistributionSpace) -> EmpiricalDistribution:
    """Most probable atom of ``row``; ties go to the lowest canonical index."""
    row = np.asarray(row, dtype=float)
    if abs(row.sum() - 1.0) > 1e-9:
        raise ValueError("row must be a pmf over M(n)")
    return dspace.atom(int(_first_argmax(row)[0]))


class Estimator:
    """Base class; subclasses implement :meth:`batch`."""

    name = "estimator"

    def __call__(self, row, x: int, y: int, dspace: DistributionSpace) -> np.ndarray:
        return self.batch(np.asarray(row, dtype=float)[None, :], np.array([x]), y, dspace)[0]

    def batch(self, rows: np.ndarray, xs: np.ndarray, y: int,
              dspace: DistributionSpace) -> np.ndarray:
        raise NotImplementedError

    def table(self, kernel: TransitionKernel, y_max: int) -> np.ndarray:
        """Estimates for every ``(x, y)`` with ``y <= y_max``; shape ``(K, y_max+1, |S|)``."""
        ds = kernel.dspace
        xs = np.arange(len(ds))
        out = np.empty((len(ds), y_max + 1, len(ds.space)))
        for y in range(y_max + 1):
            out[:, y] = self.batch(kernel.power(y), xs, y, ds)
        return out


class MapEstimator(Estimator):
    name = "map"

    def batch(self, rows, xs, y, dspace):
        return dspace.probs[_first_argmax(rows)]


class MeanEstimator(Estimator):
    """Posterior mean of the empirical distribution (not necessarily in M(n))."""

    name = "mean"

    def batch(self, rows, xs, y, dspace):
        return rows @ dspace.probs


class LastObservationEstimator(Estimator):
    """Reuse the last credible observation unchanged."""

    name = "identity"

    def batch(self, rows, xs, y, dspace):
        return dspace.probs[np.asarray(xs)]

    def table(self, kernel, y_max):
        p = kernel.dspace.probs
        return np.repeat(p[:, None, :], y_max + 1, axis=1)


class InfinitePopulationEstimator(Estimator):
    """Propagate the last observation through the mean-field map ``y`` times."""

    name = "infinite_population"

    def __init__(self, operator):
        self.operator = operator

    def batch(self, rows, xs, y, dspace):
        out = dspace.probs[np.asarray(xs)].copy()
        for _ in range(y):
            out = self.operator.step_batch(out)
        return out

    def table(self, kernel, y_max):
        ds = kernel.dspace
        cur = ds.probs.copy()
        out = np.empty((len(ds), y_max + 1, len(ds.space)))
        out[:, 0] = cur
        for y in range(1, y_max + 1):
            cur = self.operator.step_batch(cur)
            out[:, y] = cur
        return out


def make_estimator(name: str, local=None) -> Estimator:
    key = name.replace("-", "_")
    if key == "map":
        return MapEstimator()
    if key == "mean":
        return MeanEstimator()
    if key in ("identity", "last_observation"):
        return LastObservationEstimator()
    if key == "infinite_population":
        if local is None:
            raise ValueError("the infinite-population estimator needs the local kernel")
        from .asymptotics import MeanFieldOperator
        return InfinitePopulationEstimator(MeanFieldOperator(local))
    raise ValueError(f"unknown estimator {name!r}")
