"""Dynamic programming on the (last credible data, elapsed time) planning space.

The planning state is ``(x, y)``: ``x`` indexes the last credible observation
in M(n) and ``y`` counts the blanks received since.  Given ``(x, y)`` the law
of the current data is row ``x`` of ``T_m^y``, so the expected step cost and
the transition of ``(x, y)`` are both available in closed form and the
problem reduces to a finite dynamic program once ``y`` is capped at ``k``.
At ``y = k`` a further blank wraps the state around to ``(m*, 0)``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .chain_dynamics import DistributionSpace, TransitionKernel, _counts_label
from .costs import CostModel, cost_upper_bound
from .estimators import Estimator

log = logging.getLogger(__name__)

# a strategy collects only when V1 beats V0 by more than this relative margin
TIE_RTOL = 1e-10
# entries of a (K, K, |S|) broadcast evaluated at once when tabulating costs
_COST_CHUNK = 4_000_000


class NonConvergenceError(RuntimeError):
    """Value iteration exhausted its iteration budget."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3g})")
        self.residual = residual


def truncation_index(eps: float, gamma: float, c_max: float) -> int:
    """Smallest ``k >= 0`` with ``k >= log((1-gamma) eps / (2 c_max)) / log(gamma)``."""
    if eps <= 0 or c_max <= 0 or not 0 < gamma < 1:
        raise ValueError("need eps > 0, c_max > 0 and 0 < gamma < 1")
    ratio = (1.0 - gamma) * eps / (2.0 * c_max)
    if ratio >= 1.0:
        warnings.warn("eps >= 2 c_max / (1 - gamma): any k satisfies the bound, using k=0",
                      stacklevel=2)
        return 0
    return max(0, math.ceil(math.log(ratio) / math.log(gamma)))


def default_anchor(dspace: DistributionSpace) -> int:
    """Wrap-around atom ``m*``: the atom closest to uniform, lowest index on ties."""
    return dspace.uniform_closest()


def expected_step_cost(x: int, y: int, a: int, kernel: TransitionKernel, cost: CostModel,
                       estimator: Estimator) -> float:
    """``sum_m c(m, h(T^y(x, .)), a) T^y(x, m)`` for a single planning state."""
    ds = kernel.dspace
    row = kernel.power(y)[x]
    m_hat = estimator(row, x, y, ds)
    vals = cost(ds.probs, m_hat[None, :], a)
    return float(row @ vals)


def expected_cost_table(kernel: TransitionKernel, cost: CostModel, estimates: np.ndarray,
                        y_max: int) -> np.ndarray:
    """Tabulate the expected step cost over ``x``, ``y <= y_max`` and both actions.

    ``estimates`` has shape ``(K, >= y_max+1, |S|)``.  Returns ``(K, y_max+1, 2)``.
    """
    ds = kernel.dspace
    K, S = len(ds), len(ds.space)
    step = max(1, _COST_CHUNK // max(1, K * S))
    out = np.empty((K, y_max + 1, 2))
    atoms = ds.probs[None, :, :]
    for y in range(y_max + 1):
        P = kernel.power(y)
        for lo in range(0, K, step):
            hi = min(K, lo + step)
            est = estimates[lo:hi, y][:, None, :]
            for a in (0, 1):
                out[lo:hi, y, a] = (P[lo:hi] * cost(atoms, est, a)).sum(axis=1)
    return out


@dataclass
class ValueTable:
    """Converged branches of the truncated Bellman equation."""

    dspace: DistributionSpace
    k: int
    v0: np.ndarray
    v1: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    anchor: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def value(self) -> np.ndarray:
        return np.minimum(self.v0, self.v1)

    @property
    def action(self) -> np.ndarray:
        return extract_strategy(self)

    def to_csv(self, path=None, header_lines: list[str] | None = None) -> str:
        buf = io.StringIO()
        for line in header_lines or []:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_index", "x_counts", "y", "V0", "V1", "V", "action"])
        V, act = self.value, self.action
        for x, counts in enumerate(self.dspace.counts):
            label = _counts_label(counts)
            for y in range(self.k + 1):
                w.writerow([x, label, y, repr(float(self.v0[x, y])), repr(float(self.v1[x, y])),
                            repr(float(V[x, y])), int(act[x, y])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def strategy_from_csv(source) -> np.ndarray:
    """Read the action column of a value-table CSV back into an ``(K, k+1)`` array."""
    text = source if "\n" in str(source) else open(source).read()
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    K = max(int(r["x_index"]) for r in rows) + 1
    k = max(int(r["y"]) for r in rows)
    out = np.zeros((K, k + 1), dtype=np.int8)
    for r in rows:
        out[int(r["x_index"]), int(r["y"])] = int(r["action"])
    return out


def extract_strategy(table: ValueTable, rtol: float = TIE_RTOL) -> np.ndarray:
    """Collect (1) only where ``V1 < V0`` strictly; ties go to 0."""
    v0, v1 = table.v0, table.v1
    margin = rtol * np.maximum(np.abs(v0), np.abs(v1))
    return (v0 - v1 > margin).astype(np.int8)


def first_collect_times(strategy: np.ndarray) -> np.ndarray:
    """Smallest ``y`` with action 1 for each ``x``; ``-1`` when the strategy never collects."""
    hit = strategy.astype(bool)
    return np.where(hit.any(axis=1), hit.argmax(axis=1), -1)


def _iteration_budget(tol: float, gamma: float, c_bound: float, margin: int) -> int:
    if c_bound <= 0:
        return 1 + margin
    return max(1, math.ceil(math.log(tol * (1 - gamma) / c_bound) / math.log(gamma))) + margin


def value_iteration(kernel: TransitionKernel, cost: CostModel, estimator: Estimator,
                    q: float, gamma: float, k: int, tol: float = 1e-9,
                    anchor: int | None = None, estimates: np.ndarray | None = None,
                    chat: np.ndarray | None = None, margin: int = 20,
                    max_iter: int | None = None) -> ValueTable:
    """Solve the truncated Bellman equation by Jacobi value iteration.

    Iterates until the a-posteriori error bound ``gamma/(1-gamma) * residual``
    drops below ``tol``.  ``estimates`` or ``chat`` may be passed in to reuse
    tables across runs that differ only in ``q``, ``gamma`` or ``k``.
    """
    if not 0 <= q <= 1:
        raise ValueError("q must lie in [0, 1]")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if k < 0:
        raise ValueError("k must be nonnegative")
    ds = kernel.dspace
    K = len(ds)
    anchor = default_anchor(ds) if anchor is None else int(anchor)
    if chat is None:
        if estimates is None:
            estimates = estimator.table(kernel, k)
        chat = expected_cost_table(kernel, cost, estimates, k)
    chat = chat[:, : k + 1]
    c0, c1 = chat[..., 0], chat[..., 1]
    budget = _iteration_budget(tol, gamma, float(chat.max(initial=0.0)), margin)
    if max_iter is not None:
        budget = min(budget, max_iter)
    T = kernel.matrix

    V = np.zeros((K, k + 1))
    cont = np.empty_like(V)
    coll = np.empty_like(V)
    residual = np.inf
    for it in range(1, budget + 1):
        cont[:, :k] = V[:, 1:]
        cont[:, k] = V[anchor, 0]
        w = V[:, 0]
        for y in range(k + 1):
            w = T @ w
            coll[:, y] = w
        V0 = c0 + gamma * cont
        V1 = c1 + (1 - q) * gamma * cont + q * gamma * coll
        V_new = np.minimum(V0, V1)
        residual = float(np.abs(V_new - V).max())
        V = V_new
        if residual * gamma / (1 - gamma) <= tol:
            break
    else:
        raise NonConvergenceError(f"value iteration did not converge in {budget} sweeps",
                                  residual)
    log.debug("value iteration converged after %d sweeps, residual %.3g", it, residual)
    return ValueTable(ds, k, V0, V1, iterations=it, residual=residual, anchor=anchor,
                      meta={"q": q, "gamma": gamma, "tol": tol,
                            "cost": cost.metadata() if hasattr(cost, "metadata") else {},
                            "estimator": getattr(estimator, "name", "")})


@dataclass
class ChainProblem:
    """A fully specified collect-or-estimate problem on a finite chain."""

    kernel: TransitionKernel
    cost: CostModel
    estimator: Estimator
    q: float
    gamma: float
    x1: int = 0

    @property
    def dspace(self) -> DistributionSpace:
        return self.kernel.dspace

    def c_max(self) -> float:
        if getattr(self.cost, "c_max", None) is not None:
            return float(self.cost.c_max)
        return cost_upper_bound(self.cost, self.dspace.probs)


def finite_horizon_xy_dp(problem: ChainProblem, H: int) -> np.ndarray:
    """Optimal ``H``-step discounted cost on the ``(x, y)`` space, no truncation.

    Returns the table ``W[x, y]`` for ``y <= H`` (values with ``H`` steps to go).
    """
    kernel, q, gamma = problem.kernel, problem.q, problem.gamma
    K = len(kernel)
    est = problem.estimator.table(kernel, H)
    chat = expected_cost_table(kernel, problem.cost, est, H)
    W = np.zeros((K, H + 2))
    for _ in range(H):
        nxt = np.zeros_like(W)
        for y in range(H + 1):
            reset = kernel.power(y + 1) @ W[:, 0]
            stay = W[:, y + 1]
            v0 = chat[:, y, 0] + gamma * stay
            v1 = chat[:, y, 1] + gamma * ((1 - q) * stay + q * reset)
            nxt[:, y] = np.minimum(v0, v1)
        W = nxt
    return W[:, : H + 1]


def bellman_oracle_small(problem: ChainProblem, H: int, max_atoms: int = 4) -> float:
    """Optimal ``H``-step cost over all history-dependent strategies.

    Enumerates the full tree of actions and observations, carrying the Bayes
    belief over M(n) along each branch.  Exponential in ``H``; only meant for
    tiny instances.
    """
    ds = problem.dspace
    if len(ds) > max_atoms or H > 6:
        raise ValueError(f"oracle limited to |M(n)| <= {max_atoms} and H <= 6")
    T = problem.kernel.matrix
    probs = ds.probs
    cost, est, q, gamma = problem.cost, problem.estimator, problem.q, problem.gamma

    def solve(belief, x, y, depth):
        m_hat = est(belief, x, y, ds)
        step = [float(belief @ cost(probs, m_hat[None, :], a)) for a in (0, 1)]
        if depth == 1:
            return min(step)
        pred = belief @ T
        blank = solve(pred, x, y + 1, depth - 1)
        collect = (1 - q) * blank
        for m2 in np.flatnonzero(pred > 0):
            point = np.zeros(len(ds))
            point[m2] = 1.0
            collect += q * pred[m2] * solve(point, int(m2), 0, depth - 1)
        return min(step[0] + gamma * blank, step[1] + gamma * collect)

    start = np.zeros(len(ds))
    start[problem.x1] = 1.0
    return solve(start, problem.x1, 0, H)
