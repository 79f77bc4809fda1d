"""Linear network dynamics: spectral modes, the elapsed-time program, Riccati search.

Node states on a graph evolve through a polynomial of the adjacency matrix.
Projecting onto a few dominant eigenvectors gives low-dimensional mode
dynamics ``m' = A m + w_bar``.  For such dynamics the best estimate after
``y`` blanks is ``A^y x`` whatever the sampling strategy, so the mean-square
error depends on ``y`` only and the collect-or-estimate decision becomes a
dynamic program over elapsed time.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .planning import NonConvergenceError

MAX_EXHAUSTIVE_H = 22


@dataclass(frozen=True)
class GraphSpec:
    adjacency: np.ndarray
    alpha: tuple = (0.0, 1.0)
    D: int = 1

    def __post_init__(self):
        adj = np.asarray(self.adjacency, dtype=float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError("adjacency must be square")
        if np.abs(adj - adj.T).max(initial=0.0) > 1e-12:
            raise ValueError("adjacency must be symmetric")
        if not 1 <= self.D <= adj.shape[0]:
            raise ValueError("need 1 <= D <= n")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class Mode:
    A: float
    eigenvalue: float
    v: np.ndarray


def complete_graph(n: int) -> np.ndarray:
    return np.ones((n, n)) - np.eye(n)


def star_graph(n: int) -> np.ndarray:
    adj = np.zeros((n, n))
    adj[0, 1:] = adj[1:, 0] = 1.0
    return adj


def load_adjacency(path) -> np.ndarray:
    """Dense matrix CSV, or an edge list ``i,j[,weight]`` (0-based, undirected)."""
    text = open(path).read() if "\n" not in str(path) else str(path)
    rows = []
    for r in csv.reader(io.StringIO(text)):
        if not r or r[0].strip().startswith("#"):
            continue
        try:
            rows.append([float(v) for v in r])
        except ValueError:
            continue  # header line
    if rows and all(len(r) == len(rows) for r in rows) and len(rows) > 3:
        return np.array(rows)
    n = int(max(max(r[0], r[1]) for r in rows)) + 1
    adj = np.zeros((n, n))
    for r in rows:
        i, j = int(r[0]), int(r[1])
        w = r[2] if len(r) > 2 else 1.0
        adj[i, j] = adj[j, i] = w
    return adj


def spectral_vectorize(g: GraphSpec) -> list[Mode]:
    """Dominant modes of the adjacency polynomial ``sum_l alpha(l) Adj^l``.

    Modes are the top-``D`` eigenpairs of the adjacency by ``|lambda|``
    (positive eigenvalue first on ties), with ``A_d = sum_l alpha(l) lambda^l``.
    Eigenvectors are scaled so that ``mean(v**2) = 1`` and signed so that
    their largest-magnitude entry is positive.
    """
    lam, vec = np.linalg.eigh(g.adjacency)
    order = sorted(range(len(lam)), key=lambda i: (-round(abs(lam[i]), 10), -lam[i]))
    modes = []
    for i in order[: g.D]:
        v = vec[:, i] * math.sqrt(g.n) / np.linalg.norm(vec[:, i])
        j = int(np.argmax(np.abs(v) - 1e-12 * np.arange(g.n)))
        if v[j] < 0:
            v = -v
        A_d = sum(a * lam[i] ** l for l, a in enumerate(g.alpha))
        modes.append(Mode(float(A_d), float(lam[i]), v))
    return modes


@dataclass
class LinearNetworkModel:
    """Mode dynamics ``m' = A m + w_bar`` with the collection problem's parameters.

    ``C`` and ``obs_cov`` describe noisy measurements ``z = C m + xi`` for the
    finite-horizon Riccati search; the elapsed-time program ignores them.
    """

    A: np.ndarray
    noise_cov: np.ndarray
    q: float = 1.0
    gamma: float = 0.9
    fee: float = 1.0
    weights: np.ndarray | None = None
    sigma2: float | None = None
    C: np.ndarray | None = None
    obs_cov: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.noise_cov = np.atleast_2d(np.asarray(self.noise_cov, dtype=float))
        D = self.A.shape[0]
        if self.A.shape != (D, D) or self.noise_cov.shape != (D, D):
            raise ValueError("A and noise_cov must be square with matching size")
        if np.abs(self.noise_cov - self.noise_cov.T).max() > 1e-12:
            raise ValueError("noise covariance must be symmetric")
        if np.linalg.eigvalsh(self.noise_cov).min() < -1e-12:
            raise ValueError("noise covariance must be positive semidefinite")
        if self.C is not None:
            self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        if self.obs_cov is not None:
            self.obs_cov = np.atleast_2d(np.asarray(self.obs_cov, dtype=float))

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    @property
    def stable_symmetric(self) -> bool:
        sym = np.abs(self.A - self.A.T).max() <= 1e-12
        return bool(sym and np.abs(np.linalg.eigvals(self.A)).max() < 1)

    @classmethod
    def from_graph(cls, g: GraphSpec, sigma2: float, **kw) -> "LinearNetworkModel":
        """Mode model of a graph whose nodes receive i.i.d. noise of variance ``sigma2``.

        The mode noise ``w_bar = (1/n) V^T w`` has covariance ``sigma2 V^T V / n^2``.
        """
        modes = spectral_vectorize(g)
        V = np.stack([m.v for m in modes], axis=1)
        cov = sigma2 * V.T @ V / g.n**2
        A = np.diag([m.A for m in modes])
        return cls(A, cov, weights=V, sigma2=sigma2,
                   meta={"eigenvalues": [m.eigenvalue for m in modes]}, **kw)


def kalman_like_update(m_hat, x_next, y_next: int, A) -> np.ndarray:
    """Fresh credible data replaces the estimate; otherwise propagate through ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m_hat = np.atleast_1d(np.asarray(m_hat, dtype=float))
    if m_hat.shape[-1] != A.shape[0]:
        raise ValueError("estimate and A have mismatched dimensions")
    if y_next == 0:
        x_next = np.atleast_1d(np.asarray(x_next, dtype=float))
        if x_next.shape != m_hat.shape:
            raise ValueError("observation and estimate have mismatched dimensions")
        return x_next
    return A @ m_hat


def estimate_from_last(x, y: int, A) -> np.ndarray:
    """``A^y x``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return np.linalg.matrix_power(A, int(y)) @ np.atleast_1d(np.asarray(x, dtype=float))


def elapsed_cost_sum(y: int, A, noise_cov) -> float:
    """``sum_{tau < y} Tr(A^tau Sigma (A^tau)^T)``: the error variance after ``y`` blanks."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    total, Ap = 0.0, np.eye(A.shape[0])
    for _ in range(int(y)):
        total += float(np.trace(Ap @ cov @ Ap.T))
        Ap = A @ Ap
    return total


def elapsed_cost_closed(y: int, A, noise_cov) -> float:
    """Closed form ``Tr((I - A^T A)^{-1} (I - (A^T A)^y) Sigma)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    cov = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    G = A.T @ A
    I = np.eye(A.shape[0])
    core = np.linalg.solve(I - G, I - np.linalg.matrix_power(G, int(y)))
    return float(np.trace(core @ cov))


def elapsed_cost(y: int, a: int, model: LinearNetworkModel, form: str = "auto") -> float:
    """Expected ``||m - A^y x||^2 + fee * a`` after ``y`` blanks."""
    if y < 0:
        raise ValueError("y must be nonnegative")
    if form == "sum" or (form == "auto" and not model.stable_symmetric):
        err = elapsed_cost_sum(y, model.A, model.noise_cov)
    else:
        try:
            err = elapsed_cost_closed(y, model.A, model.noise_cov)
        except np.linalg.LinAlgError:
            err = elapsed_cost_sum(y, model.A, model.noise_cov)
    return err + model.fee * a


def elapsed_cost_table(model: LinearNetworkModel, k: int, tau: int = 0) -> np.ndarray:
    """``c[y, a]`` for ``y <= k``; ``tau`` shifts every elapsed time (delayed data)."""
    A, cov = model.A, model.noise_cov
    out = np.empty((k + 1, 2))
    # incremental form of the finite sum; exact for any A
    total, Ap = 0.0, np.eye(model.dim)
    for _ in range(tau):
        total += float(np.trace(Ap @ cov @ Ap.T))
        Ap = A @ Ap
    for y in range(k + 1):
        out[y] = (total, total + model.fee)
        total += float(np.trace(Ap @ cov @ Ap.T))
        Ap = A @ Ap
    return out


def monte_carlo_elapsed_cost(model: LinearNetworkModel, y: int, samples: int = 100_000,
                             noise: str = "gaussian", seed: int = 0) -> tuple[float, float]:
    """Sample mean and standard error of ``||sum_{tau<y} A^tau w_bar_tau||^2``."""
    from .simulation import LinearWorld
    world = LinearWorld(model.A, weights=model.weights, sigma2=model.sigma2 or 1.0,
                        noise_cov=None if model.weights is not None else model.noise_cov,
                        noise=noise, paths=samples, rng=seed)
    for _ in range(y):
        world.step(0)
    err = world.m - world.estimate()
    sq = (err * err).sum(axis=1)
    return float(sq.mean()), float(sq.std(ddof=1) / math.sqrt(samples))


@dataclass
class YSpaceSolution:
    v0: np.ndarray
    v1: np.ndarray
    costs: np.ndarray
    iterations: int

    @property
    def value(self) -> np.ndarray:
        return np.minimum(self.v0, self.v1)

    @property
    def action(self) -> np.ndarray:
        margin = 1e-10 * np.maximum(np.abs(self.v0), np.abs(self.v1))
        return (self.v0 - self.v1 > margin).astype(np.int8)

    @property
    def threshold(self) -> int:
        """First elapsed time with action 1, or -1 when the strategy never collects."""
        hits = np.flatnonzero(self.action)
        return int(hits[0]) if len(hits) else -1


def y_space_value_iteration(model: LinearNetworkModel, k: int, tol: float = 1e-9,
                            tau: int = 0, costs: np.ndarray | None = None,
                            margin: int = 20) -> YSpaceSolution:
    """Bellman equation over elapsed time only.

    ``V0(y) = c(y,0) + gamma V(y+1)`` and
    ``V1(y) = c(y,1) + (1-q) gamma V(y+1) + q gamma V(0)``, with ``V(k+1)``
    read as ``V(0)``.  Collect exactly where ``V1 < V0``.
    """
    q, gamma = model.q, model.gamma
    c = elapsed_cost_table(model, k, tau) if costs is None else np.asarray(costs)
    c_bound = float(c.max(initial=0.0))
    budget = margin + (1 if c_bound <= 0 else
                       max(1, math.ceil(math.log(tol * (1 - gamma) / c_bound) / math.log(gamma))))
    V = np.zeros(k + 1)
    nxt = np.empty(k + 1)
    for it in range(1, budget + 1):
        nxt[:k] = V[1:]
        nxt[k] = V[0]
        V0 = c[:, 0] + gamma * nxt
        V1 = c[:, 1] + (1 - q) * gamma * nxt + q * gamma * V[0]
        V_new = np.minimum(V0, V1)
        residual = float(np.abs(V_new - V).max())
        V = V_new
        if residual * gamma / (1 - gamma) <= tol:
            return YSpaceSolution(V0, V1, c, it)
    raise NonConvergenceError("elapsed-time value iteration did not converge", residual)


def estimate_only_cost(model: LinearNetworkModel) -> float:
    """Discounted cost of never collecting, starting from fresh data.

    ``sum_y gamma^y c(y, 0)``; in closed form for stable symmetric ``A``.
    """
    gamma = model.gamma
    if model.stable_symmetric:
        G = model.A.T @ model.A
        I = np.eye(model.dim)
        inner = I / (1 - gamma) - np.linalg.inv(I - gamma * G)
        return float(np.trace(np.linalg.solve(I - G, inner) @ model.noise_cov))
    # truncated series; diverges (returns inf) when gamma * rho(A)^2 >= 1
    terms = math.ceil(math.log(1e-15) / math.log(gamma))
    c = elapsed_cost_table(model, terms)[:, 0]
    return float(np.sum(gamma ** np.arange(terms + 1) * c))


# -- noisy measurements: Riccati recursion and exhaustive schedule search ----

def riccati_step(P, a: int, A, noise_cov, C=None, obs_cov=None) -> np.ndarray:
    """One step of the error-covariance recursion.

    ``a = 0``: prediction only.  ``a = 1``: measurement ``C m + xi`` folded in
    before predicting.  A singular innovation covariance is handled with a
    pseudo-inverse and a warning.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = np.atleast_2d(np.asarray(P, dtype=float))
    W = np.atleast_2d(np.asarray(noise_cov, dtype=float))
    out = A @ P @ A.T + W
    if a:
        C = np.eye(A.shape[0]) if C is None else np.atleast_2d(np.asarray(C, dtype=float))
        R = np.zeros((C.shape[0], C.shape[0])) if obs_cov is None else \
            np.atleast_2d(np.asarray(obs_cov, dtype=float))
        S = C @ P @ C.T + R
        APC = A @ P @ C.T
        if np.linalg.matrix_rank(S) < S.shape[0]:
            if np.abs(P).max() > 0:
                warnings.warn("singular innovation covariance; using pseudo-inverse",
                              RuntimeWarning, stacklevel=2)
            gain = APC @ np.linalg.pinv(S)
        else:
            gain = np.linalg.solve(S.T, APC.T).T
        out = out - gain @ APC.T
    return 0.5 * (out + out.T)


def schedule_objective(schedule, A, noise_cov, C=None, obs_cov=None, gamma: float = 0.9,
                       fee: float = 1.0) -> float:
    """``sum_t gamma^(t-1) (Tr(P_{t+1}) + fee a_t)`` from ``P_1 = 0``."""
    D = np.atleast_2d(np.asarray(A)).shape[0]
    P = np.zeros((D, D))
    total, disc = 0.0, 1.0
    for a in schedule:
        P = riccati_step(P, a, A, noise_cov, C, obs_cov)
        total += disc * (float(np.trace(P)) + fee * a)
        disc *= gamma
    return total


def finite_horizon_schedule(A, noise_cov, C=None, obs_cov=None, H: int = 10,
                            gamma: float = 0.9, fee: float = 1.0, decimals: int = 12,
                            tie_rtol: float = 1e-12) -> tuple[tuple[int, ...], float]:
    """Globally optimal binary schedule by exhaustive search.

    Subtrees are memoized on ``(t, round(P))``.  Ties prefer collecting,
    since a measurement never increases the error covariance.
    """
    if H > MAX_EXHAUSTIVE_H:
        raise ValueError(f"H={H} exceeds the exhaustive-search cap {MAX_EXHAUSTIVE_H}; "
                         "a heuristic scheduler is needed for longer horizons")
    if H < 1:
        return (), 0.0
    D = np.atleast_2d(np.asarray(A)).shape[0]
    cache: dict = {}

    def best(t: int, P: np.ndarray):
        key = (t, np.round(P, decimals).tobytes())
        if key in cache:
            return cache[key]
        options = []
        for a in (1, 0):
            P2 = riccati_step(P, a, A, noise_cov, C, obs_cov)
            here = float(np.trace(P2)) + fee * a
            if t + 1 < H:
                tail, suffix = best(t + 1, P2)
            else:
                tail, suffix = 0.0, ()
            options.append((here + gamma * tail, (a,) + suffix))
        (v1, s1), (v0, s0) = options
        result = (v1, s1) if v1 <= v0 + tie_rtol * max(1.0, abs(v0)) else (v0, s0)
        cache[key] = result
        return result

    value, schedule = best(0, np.zeros((D, D)))
    return schedule, value


def schedule_grid_csv(rows: list[dict], path=None) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
