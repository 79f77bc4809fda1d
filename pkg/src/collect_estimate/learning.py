"""Model-free Q-learning on the truncated (x, y) planning space.

The learner only sees sampled costs and observations.  It never touches a
transition kernel: the state update below depends on the observation alone,
and samples come from an environment object with the method

    ``sample(x, y, a, rng) -> (cost, obs)``

where ``x, y, a`` are equal-length integer arrays and ``obs`` holds the
index of the observed atom or :data:`BLANK`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

log = logging.getLogger(__name__)

BLANK = -1


@dataclass(frozen=True)
class VirtualMdpConfig:
    k: int
    anchor: int
    q: float
    gamma: float

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be nonnegative")
        if not 0 <= self.q <= 1 or not 0 < self.gamma < 1:
            raise ValueError("need q in [0, 1] and gamma in (0, 1)")


def virtual_step(x, y, obs, cfg: VirtualMdpConfig):
    """Next planning state after observing ``obs`` (``None`` or ``BLANK`` for a blank).

    Works elementwise on arrays as well as on scalars.
    """
    if obs is None:
        obs = BLANK
    if np.ndim(x) == 0 and np.ndim(y) == 0 and np.ndim(obs) == 0:
        if obs != BLANK:
            return int(obs), 0
        if y < cfg.k:
            return int(x), int(y) + 1
        return cfg.anchor, 0
    x, y, obs = np.broadcast_arrays(np.asarray(x), np.asarray(y), np.asarray(obs))
    blank = obs == BLANK
    wrap = blank & (y >= cfg.k)
    x2 = np.where(blank, np.where(wrap, cfg.anchor, x), obs)
    y2 = np.where(blank & ~wrap, y + 1, 0)
    return x2, y2


def learning_rate(visits, scale: float = 1.0):
    """``scale / (scale + visits - 1)``; ``scale = 1`` gives ``1 / visits``.

    Any positive scale keeps the step sizes summable in square but not in
    absolute value.
    """
    visits = np.asarray(visits, dtype=float)
    if np.any(visits < 1):
        raise ValueError("visits must be >= 1")
    if scale <= 0:
        raise ValueError("scale must be positive")
    out = scale / (scale + visits - 1.0)
    return float(out) if out.ndim == 0 else out


class QTable:
    """Q values and visit counts over ``K x (k+1) x 2``."""

    def __init__(self, n_atoms: int, k: int):
        self.Q = np.zeros((n_atoms, k + 1, 2))
        self.visits = np.zeros((n_atoms, k + 1, 2), dtype=np.int64)
        self.meta: dict = {}

    @property
    def k(self) -> int:
        return self.Q.shape[1] - 1

    def values(self) -> np.ndarray:
        return self.Q.min(axis=2)

    def greedy(self) -> np.ndarray:
        """argmin over actions with ties going to 0."""
        return (self.Q[..., 1] < self.Q[..., 0]).astype(np.int8)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x_index", "y", "a", "Q", "visits"])
        for (x, y, a), v in np.ndenumerate(self.Q):
            w.writerow([x, y, a, repr(float(v)), int(self.visits[x, y, a])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "QTable":
        text = source if "\n" in str(source) else open(source).read()
        body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
        rows = list(csv.DictReader(io.StringIO(body)))
        K = max(int(r["x_index"]) for r in rows) + 1
        k = max(int(r["y"]) for r in rows)
        table = cls(K, k)
        for r in rows:
            idx = int(r["x_index"]), int(r["y"]), int(r["a"])
            table.Q[idx] = float(r["Q"])
            table.visits[idx] = int(r["visits"])
        return table

    def save(self, csv_path, json_path) -> None:
        self.to_csv(csv_path)
        with open(json_path, "w") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)


def q_update(table: QTable, x, y, a, c_obs, nxt, alpha, gamma: float) -> QTable:
    """One (or a batch of) Q-learning updates, in place.

    ``Q <- (1 - alpha) Q + alpha (c + gamma min_a' Q(x', y', a'))``
    """
    x2, y2 = nxt
    target = np.asarray(c_obs) + gamma * table.Q[x2, y2].min(axis=-1)
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha must lie in [0, 1]")
    table.Q[x, y, a] = (1 - alpha) * table.Q[x, y, a] + alpha * target
    np.add.at(table.visits, (x, y, a), 1)
    return table


class SampleEnvironment(Protocol):
    def sample(self, x: np.ndarray, y: np.ndarray, a: np.ndarray,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]: ...


@dataclass
class TrainingResult:
    table: QTable
    drift: float
    converged: bool
    sweeps: int
    curve: list = field(default_factory=list)

    def curve_csv(self, probes: Sequence[tuple[int, int]], path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sweep"] + [f"minQ_x{x}_y{y}" for x, y in probes] + ["drift"])
        for row in self.curve:
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def train_synchronized(env: SampleEnvironment, n_atoms: int, cfg: VirtualMdpConfig,
                       sweeps: int, seed: int = 0, lr_scale: float = 1.0,
                       drift_tol: float = 1e-4, window: int = 100,
                       probes: Sequence[tuple[int, int]] = (), record_every: int = 1,
                       table: QTable | None = None) -> TrainingResult:
    """Synchronized Q-learning: every ``(x, y, a)`` is updated once per sweep.

    Each sweep draws one sampled cost and observation per state-action pair,
    computes all targets from the frozen previous table and swaps the table.
    Converged means the sup-norm change stayed below ``drift_tol`` for the
    last ``window`` sweeps; otherwise the result carries ``converged=False``.
    """
    k = cfg.k
    table = QTable(n_atoms, k) if table is None else table
    rng = np.random.default_rng(seed)
    X, Y, A = (g.ravel() for g in np.meshgrid(np.arange(n_atoms), np.arange(k + 1),
                                               np.arange(2), indexing="ij"))
    recent: list[float] = []
    curve = []
    drift = math.inf
    for sweep in range(1, sweeps + 1):
        cost, obs = env.sample(X, Y, A, rng)
        x2, y2 = virtual_step(X, Y, obs, cfg)
        old = table.Q
        target = cost + cfg.gamma * old.min(axis=2)[x2, y2]
        alpha = learning_rate(table.visits.ravel() + 1, lr_scale)
        new = ((1 - alpha) * old.ravel() + alpha * target).reshape(old.shape)
        drift = float(np.abs(new - old).max())
        table.Q = new
        table.visits += 1
        recent.append(drift)
        if len(recent) > window:
            recent.pop(0)
        if probes and (sweep % record_every == 0 or sweep == sweeps):
            curve.append([sweep] + [float(new[x, y].min()) for x, y in probes] + [drift])
    converged = len(recent) >= window and max(recent) < drift_tol
    if not converged:
        log.warning("Q-learning stopped after %d sweeps with drift %.3g (threshold %.3g)",
                    sweeps, drift, drift_tol)
    table.meta.update({"seed": seed, "sweeps": int(table.visits[0, 0, 0]), "drift": drift,
                       "converged": converged, "lr_scale": lr_scale, "k": k,
                       "anchor": cfg.anchor, "q": cfg.q, "gamma": cfg.gamma})
    return TrainingResult(table, drift, converged, sweeps, curve)


def train_offline(transitions, n_atoms: int, cfg: VirtualMdpConfig, passes: int = 1,
                  lr_scale: float = 1.0, table: QTable | None = None) -> QTable:
    """Q-learning replay over logged ``(x, y, a, cost, obs)`` tuples.

    Each tuple is one transition of the decision maker's state; the next
    planning state is rebuilt from the logged observation.
    """
    table = QTable(n_atoms, cfg.k) if table is None else table
    for _ in range(passes):
        for x, y, a, c, obs in transitions:
            y = min(int(y), cfg.k)
            x2, y2 = virtual_step(int(x), y, int(obs), cfg)
            alpha = learning_rate(table.visits[x, y, a] + 1, lr_scale)
            q_update(table, int(x), y, int(a), float(c), (x2, y2), alpha, cfg.gamma)
    return table
