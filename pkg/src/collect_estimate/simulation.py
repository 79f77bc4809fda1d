"""Monte-Carlo worlds, the credibility channel and strategy evaluation.

Worlds are batched: every array carries a leading path axis so that many
independent paths advance with one vectorized step.  The decision maker's
``(x, y)`` state is updated from observations only.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .chain_dynamics import (DistributionSpace, LocalKernel, NodeDynamics, TransitionKernel,
                             _counts_label)
from .learning import BLANK

NOISE_KINDS = ("gaussian", "uniform", "centered_exponential")


def standard_noise(kind: str, rng: np.random.Generator, size) -> np.ndarray:
    """Zero-mean, unit-variance draws of the named family."""
    if kind == "gaussian":
        return rng.standard_normal(size)
    if kind == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size)
    if kind in ("centered_exponential", "exponential"):
        return rng.exponential(1.0, size) - 1.0
    raise ValueError(f"unknown noise kind {kind!r}; choose from {NOISE_KINDS}")


def _row_sampler(rows: np.ndarray):
    """Vectorized inverse-cdf sampling from many rows of a stochastic matrix.

    Returns ``draw(row_index, u) -> column index``.
    """
    R, C = rows.shape
    cum = np.cumsum(rows, axis=1)
    cum[:, -1] = 1.0
    offsets = np.arange(R, dtype=float)
    flat = (cum + offsets[:, None]).ravel()

    def draw(r, u):
        r = np.asarray(r)
        idx = np.searchsorted(flat, u + r, side="right") - r * C
        return np.minimum(idx, C - 1)

    return draw


def channel(a: np.ndarray, m_next: np.ndarray, q: float, rng: np.random.Generator) -> np.ndarray:
    """Bernoulli credibility channel: credible delivery of ``m_next`` only when collecting."""
    a = np.asarray(a).astype(bool)
    credible = np.zeros(a.shape, dtype=bool)
    if a.any():
        credible[a] = rng.random(int(a.sum())) < q
    return np.where(credible, m_next, BLANK)


def update_planning_state(x, y, obs):
    """``(o, 0)`` after a credible observation, ``(x, y+1)`` after a blank."""
    obs = np.asarray(obs)
    got = obs != BLANK
    return np.where(got, obs, x), np.where(got, 0, np.asarray(y) + 1)


class ChainWorld:
    """A batch of networks of ``n`` chains plus the decision maker's ``(x, y)``.

    ``mode="nodes"`` keeps every node's state and applies the pathwise update
    ``s' = f(s, m, w)`` (or samples each node from ``T(.|s, m)`` when only a
    local kernel is given).  ``mode="counts"`` advances the count vectors
    directly by multinomial allocation, which has the same law.
    """

    def __init__(self, dspace: DistributionSpace, *, local: LocalKernel | None = None,
                 dynamics: NodeDynamics | None = None, q: float = 1.0, paths: int = 1,
                 init: int | np.ndarray = 0, rng: np.random.Generator | int | None = None,
                 mode: str = "nodes"):
        if local is None and dynamics is None:
            raise ValueError("need a local kernel or node dynamics")
        self.dspace = dspace
        self.n, self.S = dspace.n, len(dspace.space)
        self.q = float(q)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.mode = mode
        self.dynamics = dynamics
        self.local = local if local is not None else dynamics.local_kernel(
            dspace if dynamics.coupled else None)
        self._table = None
        if dynamics is not None and mode == "nodes":
            self._table = dynamics.transition_table(dspace if dynamics.coupled else None)
            self._noise_pmf = dynamics.noise_pmf
        init = np.broadcast_to(np.asarray(init, dtype=np.int64), (paths,)).copy()
        self.m = init
        counts = dspace.counts[init]
        self.counts = counts.copy()
        if mode == "nodes":
            # node states are exchangeable; lay them out in state order
            self.nodes = np.stack([np.repeat(np.arange(self.S), c) for c in counts])
        self.x = init.copy()
        self.y = np.zeros(paths, dtype=np.int64)
        self.t = 1

    @property
    def paths(self) -> int:
        return self.m.shape[0]

    def _advance_nodes(self):
        P, n = self.nodes.shape
        if self._table is not None:
            w = self.rng.choice(len(self._noise_pmf), size=(P, n), p=self._noise_pmf)
            if self.dynamics.coupled:
                nxt = self._table[self.m[:, None], self.nodes, w]
            else:
                nxt = self._table[self.nodes, w]
        else:
            u = self.rng.random((P, n))
            if self.local.coupled:
                rows = self.local.matrices.reshape(-1, self.S)
                draw = _row_sampler(rows)
                nxt = draw(self.m[:, None] * self.S + self.nodes, u)
            else:
                draw = _row_sampler(self.local.matrices)
                nxt = draw(self.nodes, u)
        self.nodes = nxt
        self.counts = np.stack([np.bincount(r, minlength=self.S) for r in nxt])

    def _advance_counts(self):
        if self.local.coupled:
            pvals = self.local.matrices[self.m]
        else:
            pvals = self.local.matrices
        moved = self.rng.multinomial(self.counts, pvals)
        self.counts = moved.sum(axis=1)

    def step(self, a) -> np.ndarray:
        """Advance one step under actions ``a``; returns the observations."""
        a = np.broadcast_to(np.asarray(a, dtype=np.int64), (self.paths,))
        if self.mode == "nodes":
            self._advance_nodes()
        else:
            self._advance_counts()
        self.m = np.atleast_1d(self.dspace.index_of(self.counts))
        obs = channel(a, self.m, self.q, self.rng)
        self.x, self.y = update_planning_state(self.x, self.y, obs)
        self.t += 1
        return obs


def step_chain(world: ChainWorld, a) -> ChainWorld:
    world.step(a)
    return world


class ModelEnv:
    """Sampling environment for Q-learning, backed by a known kernel.

    For a planning state ``(x, y)`` the current data is drawn from row ``x``
    of ``T^y`` and the next data from ``T`` given the current one; the
    learner sees only the resulting cost and observation.
    """

    # largest (K, k+1, K, 2) table of per-outcome costs kept in memory
    COST_TABLE_CAP = 20_000_000

    def __init__(self, kernel: TransitionKernel, cost, estimates: np.ndarray, q: float,
                 k: int, exact_cost: np.ndarray | None = None):
        self.kernel, self.cost, self.q, self.k = kernel, cost, float(q), int(k)
        self.K = len(kernel)
        self.estimates = estimates
        self.exact_cost = exact_cost
        self._cost_table = None
        if exact_cost is None and 2 * self.K * self.K * (k + 1) <= self.COST_TABLE_CAP:
            probs = kernel.dspace.probs
            tab = np.empty((self.K, k + 1, self.K, 2))
            for y in range(k + 1):
                for a in (0, 1):
                    tab[:, y, :, a] = cost(probs[None, :, :], estimates[:, y][:, None, :], a)
            self._cost_table = tab
        powers = kernel.powers(k)
        # row (x * (k+1) + y) is the law of the current data at planning state (x, y);
        # this layout keeps lookups sorted when sweeping x-major
        self._draw_now = _row_sampler(powers.transpose(1, 0, 2).reshape(-1, self.K))
        self._draw_next = _row_sampler(kernel.matrix)

    def sample(self, x, y, a, rng):
        x, y, a = np.asarray(x), np.asarray(y), np.asarray(a)
        m = self._draw_now(x * (self.k + 1) + y, rng.random(x.shape))
        m2 = self._draw_next(m, rng.random(x.shape))
        if self.exact_cost is not None:
            c = self.exact_cost[x, y, a]
        elif self._cost_table is not None:
            c = self._cost_table[x, y, m, a]
        else:
            c = self.cost(self.kernel.dspace.probs[m], self.estimates[x, y], a)
        obs = channel(a, m2, self.q, rng)
        return c, obs


@dataclass
class EvaluationReport:
    mean: float
    se: float
    paths: int
    horizon: int
    tail_bound: float
    meta: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"mean": self.mean, "se": self.se, "paths": self.paths, "horizon": self.horizon,
                "tail_bound": self.tail_bound, **self.meta}


def horizon_for_tail(gamma: float, c_max: float, tail_tol: float | None = None) -> int:
    """Smallest ``H`` with ``gamma^H c_max / (1 - gamma) <= tail_tol``."""
    if c_max <= 0:
        return 1
    if tail_tol is None:
        tail_tol = 1e-6 * c_max / (1 - gamma)
    return max(1, math.ceil(math.log(tail_tol * (1 - gamma) / c_max) / math.log(gamma)))


def evaluate_strategy(world_factory: Callable[[int, np.random.Generator], ChainWorld],
                      strategy, estimates: np.ndarray, cost, gamma: float,
                      H: int | None = None, paths: int = 1000, seed: int = 0,
                      c_max: float | None = None, tail_tol: float | None = None,
                      batch: int = 20_000) -> EvaluationReport:
    """Monte-Carlo estimate of the discounted cost of a strategy.

    ``strategy`` is a ``(K, k+1)`` action table (elapsed times beyond ``k``
    use column ``k``) or a callable ``(x, y) -> a``.  ``estimates`` is a
    ``(K, Y, |S|)`` table; elapsed times past ``Y-1`` reuse the last column.
    """
    if c_max is None:
        c_max = float(getattr(cost, "c_max", 0.0) or 0.0)
    if H is None:
        H = horizon_for_tail(gamma, c_max, tail_tol)
    rng = np.random.default_rng(seed)
    if callable(strategy):
        act = strategy
    else:
        table = np.asarray(strategy)
        kk = table.shape[1] - 1

        def act(x, y):
            return table[x, np.minimum(y, kk)]

    y_cap = estimates.shape[1] - 1
    totals = []
    done = 0
    while done < paths:
        P = min(batch, paths - done)
        world = world_factory(P, rng)
        probs = world.dspace.probs
        J = np.zeros(P)
        disc = 1.0
        for _ in range(H):
            a = np.asarray(act(world.x, world.y), dtype=np.int64)
            m_hat = estimates[world.x, np.minimum(world.y, y_cap)]
            J += disc * cost(probs[world.m], m_hat, a)
            world.step(a)
            disc *= gamma
        totals.append(J)
        done += P
    J = np.concatenate(totals)
    se = float(J.std(ddof=1) / math.sqrt(len(J))) if len(J) > 1 else 0.0
    return EvaluationReport(float(J.mean()), se, len(J), H,
                            gamma**H * c_max / (1 - gamma))


def estimate_kernel_monte_carlo(dspace: DistributionSpace, samples: int, seed: int = 0, *,
                                local: LocalKernel | None = None,
                                dynamics: NodeDynamics | None = None,
                                atoms=None) -> np.ndarray:
    """Empirical one-step transition frequencies from simulated node updates.

    Returns a ``(len(atoms), K)`` array of frequencies (rows for all atoms by
    default).
    """
    rng = np.random.default_rng(seed)
    atoms = np.arange(len(dspace)) if atoms is None else np.asarray(atoms)
    out = np.zeros((len(atoms), len(dspace)))
    for r, i in enumerate(atoms):
        world = ChainWorld(dspace, local=local, dynamics=dynamics, paths=samples,
                           init=int(i), rng=rng)
        world.step(np.zeros(samples, dtype=np.int64))
        out[r] = np.bincount(world.m, minlength=len(dspace)) / samples
    return out


class LinearWorld:
    """Batched linear network dynamics ``m' = A m + w_bar`` with a drop channel.

    The mode noise is assembled from i.i.d. per-node noises through the
    eigenvector weights, ``w_bar = (1/n) sum_i v_i w_i``, when ``weights``
    (shape ``(n, D)``) is given; otherwise ``w_bar`` is drawn directly with
    covariance ``noise_cov``.  Node noises have variance ``sigma2``.
    """

    def __init__(self, A, *, weights=None, sigma2: float = 1.0, noise_cov=None,
                 noise: str = "gaussian", q: float = 1.0, paths: int = 1, m1=None,
                 rng: np.random.Generator | int | None = None):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        D = self.A.shape[0]
        self.weights = None if weights is None else np.asarray(weights, dtype=float).reshape(-1, D)
        self.sigma = math.sqrt(sigma2)
        if noise_cov is not None:
            cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
            # PSD square root, robust to singular covariances
            vals, vecs = np.linalg.eigh(cov)
            self._root = vecs * np.sqrt(np.clip(vals, 0, None))
        else:
            self._root = None
        if self.weights is None and self._root is None:
            raise ValueError("need eigenvector weights or a mode noise covariance")
        self.noise = noise
        self.q = float(q)
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        m1 = np.zeros(D) if m1 is None else np.asarray(m1, dtype=float)
        self.m = np.broadcast_to(m1, (paths, D)).copy() if m1.ndim <= 1 else m1.copy()
        self.x = self.m.copy()
        self.y = np.zeros(paths, dtype=np.int64)
        self.t = 1

    @property
    def paths(self) -> int:
        return self.m.shape[0]

    def mode_noise(self) -> np.ndarray:
        P = self.paths
        if self.weights is not None:
            n = self.weights.shape[0]
            w = self.sigma * standard_noise(self.noise, self.rng, (P, n))
            return w @ self.weights / n
        z = standard_noise(self.noise, self.rng, (P, self._root.shape[1]))
        return z @ self._root.T

    def estimate(self) -> np.ndarray:
        """``A^y x`` for every path."""
        out = self.x.copy()
        for y in np.unique(self.y):
            sel = self.y == y
            out[sel] = self.x[sel] @ np.linalg.matrix_power(self.A, int(y)).T
        return out

    def step(self, a) -> np.ndarray:
        """Advance one step; returns a boolean array of credible deliveries."""
        a = np.broadcast_to(np.asarray(a).astype(bool), (self.paths,))
        self.m = self.m @ self.A.T + self.mode_noise()
        credible = np.zeros(self.paths, dtype=bool)
        if a.any():
            credible[a] = self.rng.random(int(a.sum())) < self.q
        self.x = np.where(credible[:, None], self.m, self.x)
        self.y = np.where(credible, 0, self.y + 1)
        self.t += 1
        return credible


def step_linear(world: LinearWorld, a) -> LinearWorld:
    world.step(a)
    return world


def evaluate_linear_strategy(A, strategy, gamma: float, fee: float, *, weights=None,
                             sigma2: float = 1.0, noise_cov=None, noise: str = "gaussian",
                             q: float = 1.0, H: int = 100, paths: int = 10_000,
                             seed: int = 0, m1=None) -> EvaluationReport:
    """Discounted ``||m - A^y x||^2 + fee * a`` under an elapsed-time strategy.

    ``strategy`` maps elapsed time to an action (array indexed by ``y``,
    clipped to its last entry).
    """
    strategy = np.asarray(strategy)
    kk = len(strategy) - 1
    world = LinearWorld(A, weights=weights, sigma2=sigma2, noise_cov=noise_cov, noise=noise,
                        q=q, paths=paths, m1=m1, rng=seed)
    J = np.zeros(paths)
    disc = 1.0
    for _ in range(H):
        a = strategy[np.minimum(world.y, kk)]
        err = world.m - world.estimate()
        J += disc * ((err * err).sum(axis=1) + fee * a)
        world.step(a)
        disc *= gamma
    return EvaluationReport(float(J.mean()), float(J.std(ddof=1) / math.sqrt(paths)), paths, H,
                            0.0)


# -- traces -----------------------------------------------------------------

TRACE_FIELDS = ["t", "m_counts", "a", "blank", "x_index", "y", "cost"]


def simulate_trace(world: ChainWorld, strategy, estimates: np.ndarray, cost,
                   steps: int) -> list[dict]:
    """Run path 0 of ``world`` and log every step.

    ``x_index`` and ``y`` are the planning state when the action was taken;
    ``blank`` flags whether the observation that followed was blank.
    """
    table = np.asarray(strategy)
    kk = table.shape[1] - 1
    y_cap = estimates.shape[1] - 1
    rows = []
    probs = world.dspace.probs
    for _ in range(steps):
        x, y, m = int(world.x[0]), int(world.y[0]), int(world.m[0])
        a = int(table[x, min(y, kk)])
        c = float(cost(probs[m], estimates[x, min(y, y_cap)], a))
        obs = world.step(np.full(world.paths, a))
        rows.append({"t": world.t - 1, "m_counts": _counts_label(world.dspace.counts[m]),
                     "a": a, "blank": int(obs[0] == BLANK), "x_index": x, "y": y, "cost": c})
    return rows


def write_trace_csv(rows: list[dict], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TRACE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_trace_csv(source) -> list[dict]:
    text = source if "\n" in str(source) else open(source).read()
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({"t": int(r["t"]), "m_counts": r["m_counts"], "a": int(r["a"]),
                    "blank": int(r["blank"]), "x_index": int(r["x_index"]), "y": int(r["y"]),
                    "cost": float(r["cost"])})
    return out


def trace_transitions(rows: list[dict]) -> list[tuple[int, int, int, float, int]]:
    """Turn a trace into ``(x, y, a, cost, obs)`` tuples for offline learning."""
    out = []
    for cur, nxt in zip(rows, rows[1:]):
        obs = BLANK if cur["blank"] else nxt["x_index"]
        out.append((cur["x_index"], cur["y"], cur["a"], cur["cost"], obs))
    return out


def delayed_planning_states(observations, tau: int, x1: int = 0):
    """Decision-maker states when each observation arrives ``tau`` steps late.

    ``observations[t]`` is the observation generated at step ``t+2`` (the
    first one follows the initial datum ``x1``).  Returns arrays ``(x, y)``
    where ``y`` counts the steps since the delivered datum was generated.
    """
    obs = np.asarray(observations)
    T = len(obs)
    xs = np.empty(T, dtype=np.int64)
    ys = np.empty(T, dtype=np.int64)
    # the initial datum is known from the start, so y counts up from 0 until
    # the first delayed observation arrives
    x, y = x1, 0
    for t in range(T):
        arrived = obs[t - tau] if t - tau >= 0 else BLANK
        if arrived != BLANK:
            x, y = int(arrived), tau
        else:
            y += 1
        xs[t], ys[t] = x, y
    return xs, ys
