"""Finite-state node dynamics and the induced law of the empirical distribution.

Nodes live in a finite state space ``S``.  The quantity of interest is the
empirical distribution of node states, a point of ``M(n)`` (integer counts
divided by ``n``).  This module enumerates ``M(n)`` in a fixed canonical order,
builds the single-node kernel ``T(s'|s, m)`` from a dynamics function and a
noise pmf, and lifts it to the transition matrix of the empirical
distribution.

Two independent constructions of that matrix are provided: the exact
multinomial convolution (:func:`build_kernel_exact`) and the per-state
binomial-convolution marginals (:func:`deep_ck_marginal`).
"""

from __future__ import annotations

import csv
import functools
import io
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import gammaln
from scipy.stats import binom

DEFAULT_CAP = 10**7
# dense |M(n)| x |M(n)| matrices beyond this are refused
DENSE_KERNEL_CAP = 20_000

ROW_TOL = 1e-10


class StateSpaceTooLarge(ValueError):
    """Raised when |M(n)| exceeds the configured cap."""


class DynamicsError(ValueError):
    """Raised when a dynamics function maps outside the state space."""


@dataclass(frozen=True)
class StateSpace:
    labels: tuple[float, ...]

    def __post_init__(self):
        labels = tuple(float(v) for v in self.labels)
        if not labels:
            raise ValueError("state space must contain at least one state")
        if len(set(labels)) != len(labels):
            raise ValueError(f"state labels must be distinct: {labels}")
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label: float) -> int:
        try:
            return self.labels.index(float(label))
        except ValueError:
            raise DynamicsError(f"dynamics leaves state space: {label!r} not in S") from None

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.labels, dtype=float)


@dataclass(frozen=True)
class EmpiricalDistribution:
    counts: tuple[int, ...]

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if any(c < 0 for c in counts):
            raise ValueError(f"counts must be nonnegative: {counts}")
        if sum(counts) < 1:
            raise ValueError("population size must be at least 1")
        object.__setattr__(self, "counts", counts)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def probs(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    def __repr__(self) -> str:
        return f"EmpiricalDistribution({self.counts})"


def count_empirical_distributions(n: int, size: int) -> int:
    return math.comb(n + size - 1, size - 1)


def _compositions(n: int, parts: int) -> Iterable[tuple[int, ...]]:
    # first coordinate descending, recursively: (n,0,..), (n-1,1,..), ...
    if parts == 1:
        yield (n,)
        return
    for first in range(n, -1, -1):
        for rest in _compositions(n - first, parts - 1):
            yield (first,) + rest


@functools.lru_cache(maxsize=256)
def _composition_array(n: int, parts: int) -> np.ndarray:
    if n == 1:
        # fast path: the unit vectors, in canonical order
        out = np.eye(parts, dtype=np.int64)
    else:
        out = np.array(list(_compositions(n, parts)), dtype=np.int64).reshape(-1, parts)
    out.setflags(write=False)
    return out


def enumerate_empirical_distributions(n: int, space: StateSpace,
                                      cap: int = DEFAULT_CAP) -> list[EmpiricalDistribution]:
    """All points of M(n) in canonical order.

    The order is lexicographic on count vectors with the first state's count
    descending, so for two states ``n=2`` gives ``(2,0), (1,1), (0,2)``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    size = count_empirical_distributions(n, len(space))
    if size > cap:
        raise StateSpaceTooLarge(
            f"state space too large: |M({n})| = {size} exceeds cap {cap}")
    return [EmpiricalDistribution(c) for c in _composition_array(n, len(space))]


class DistributionSpace:
    """Indexed M(n): the basis every table and kernel in the package uses."""

    def __init__(self, n: int, space: StateSpace, cap: int = DEFAULT_CAP):
        self.n = int(n)
        self.space = space
        atoms = enumerate_empirical_distributions(self.n, space, cap)
        self.counts = np.array([a.counts for a in atoms], dtype=np.int64)
        self.counts.setflags(write=False)
        self.probs = self.counts / float(self.n)
        self.probs.setflags(write=False)
        # count vectors are encoded as base-(n+1) integers when they fit in int64
        self.packed = (self.n + 1) ** len(space) < 2**62
        if self.packed:
            self._radix = (self.n + 1) ** np.arange(len(space), dtype=np.int64)
            keys = self.counts @ self._radix
            self._order = np.argsort(keys)
            self._sorted_keys = keys[self._order]
        else:
            self._lookup = {c.tobytes(): i for i, c in enumerate(self.counts)}

    def __len__(self) -> int:
        return self.counts.shape[0]

    def atom(self, i: int) -> EmpiricalDistribution:
        return EmpiricalDistribution(tuple(self.counts[i]))

    def keys(self, counts: np.ndarray) -> np.ndarray:
        if not self.packed:
            raise ValueError("count vectors too long to pack into integer keys")
        return np.asarray(counts, dtype=np.int64) @ self._radix

    def index_of_keys(self, keys: np.ndarray) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        pos = np.searchsorted(self._sorted_keys, keys)
        pos = np.minimum(pos, len(self) - 1)
        if np.any(self._sorted_keys[pos] != keys):
            raise ValueError("count vector is not a point of M(n)")
        return self._order[pos]

    def index_of(self, counts) -> np.ndarray | int:
        """Canonical index of one count vector, or of a stack of them."""
        arr = np.asarray(counts, dtype=np.int64)
        if arr.shape[-1] != len(self.space):
            raise ValueError(f"expected {len(self.space)} counts, got shape {arr.shape}")
        if np.any(arr.sum(axis=-1) != self.n) or np.any(arr < 0):
            raise ValueError(f"counts must be nonnegative and sum to n={self.n}")
        if self.packed:
            idx = self.index_of_keys(self.keys(arr))
        else:
            flat = np.ascontiguousarray(arr.reshape(-1, arr.shape[-1]))
            idx = np.array([self._lookup[r.tobytes()] for r in flat]).reshape(arr.shape[:-1])
        return int(idx) if arr.ndim == 1 else idx

    def uniform_closest(self) -> int:
        """Atom nearest (L1) to the uniform pmf; ties go to the lowest index."""
        target = np.full(len(self.space), 1.0 / len(self.space))
        dist = np.abs(self.probs - target).sum(axis=1)
        return int(np.flatnonzero(np.isclose(dist, dist.min(), rtol=0, atol=1e-12))[0])


def _check_stochastic(mat: np.ndarray, tol: float, what: str) -> None:
    if np.any(mat < -tol) or np.any(mat > 1 + tol):
        raise ValueError(f"{what}: entries must lie in [0, 1]")
    err = np.abs(mat.sum(axis=-1) - 1.0).max()
    if err > tol:
        raise ValueError(f"{what}: rows must sum to 1 (max error {err:.3g})")


class LocalKernel:
    """Single-node kernel ``T(s'|s, m)``.

    ``matrices`` is ``(|S|, |S|)`` for decoupled dynamics, or
    ``(|M(n)|, |S|, |S|)`` with one matrix per point of ``M(n)`` when the
    dynamics are coupled through the empirical distribution.  Rows index the
    current state, columns the next state.

    ``fn`` optionally evaluates the kernel at an arbitrary pmf over ``S``; the
    mean-field operator needs it off the ``M(n)`` grid.
    """

    def __init__(self, space: StateSpace, matrices, dspace: DistributionSpace | None = None,
                 fn: Callable[[np.ndarray], np.ndarray] | None = None):
        mats = np.array(matrices, dtype=float)
        S = len(space)
        if mats.shape == (S, S):
            self.coupled = False
        elif mats.ndim == 3 and mats.shape[1:] == (S, S):
            if dspace is None or mats.shape[0] != len(dspace):
                raise ValueError("coupled kernel needs one matrix per point of M(n)")
            self.coupled = True
        else:
            raise ValueError(f"kernel shape {mats.shape} does not match |S|={S}")
        _check_stochastic(mats, 1e-12, "local kernel")
        mats = np.clip(mats, 0.0, 1.0)
        mats.setflags(write=False)
        self.space = space
        self.matrices = mats
        self.dspace = dspace
        self.fn = fn

    @classmethod
    def decoupled(cls, space: StateSpace, matrix) -> "LocalKernel":
        matrix = np.asarray(matrix, dtype=float)
        return cls(space, matrix, fn=lambda p: matrix)

    @classmethod
    def from_function(cls, space: StateSpace, fn: Callable[[np.ndarray], np.ndarray],
                      dspace: DistributionSpace) -> "LocalKernel":
        """Tabulate an m-dependent kernel ``fn(p) -> (|S|,|S|)`` over M(n)."""
        mats = np.stack([np.asarray(fn(p), dtype=float) for p in dspace.probs])
        return cls(space, mats, dspace=dspace, fn=fn)

    def matrix_for(self, atom: int) -> np.ndarray:
        return self.matrices[atom] if self.coupled else self.matrices

    def at(self, p: np.ndarray) -> np.ndarray:
        if self.fn is not None:
            return np.asarray(self.fn(np.asarray(p, dtype=float)), dtype=float)
        if not self.coupled:
            return self.matrices
        raise ValueError("coupled kernel was tabulated without a function; "
                         "cannot evaluate off M(n)")


@dataclass(frozen=True)
class NodeDynamics:
    """Pathwise node update ``s' = f(s, m, w)`` with i.i.d. noise ``w ~ noise``.

    ``f`` receives the state label, the current empirical distribution as a
    probability vector (``None`` when ``coupled`` is false) and a noise value,
    and returns the next state label.
    """

    space: StateSpace
    f: Callable
    noise: Mapping[float, float]
    coupled: bool = False

    def __post_init__(self):
        total = sum(self.noise.values())
        if abs(total - 1.0) > 1e-12 or any(p < 0 for p in self.noise.values()):
            raise ValueError(f"noise pmf must be nonnegative and sum to 1 (sum={total})")

    @property
    def noise_values(self) -> list[float]:
        return list(self.noise.keys())

    @property
    def noise_pmf(self) -> np.ndarray:
        return np.array(list(self.noise.values()), dtype=float)

    def _next_index(self, s: float, p, w: float) -> int:
        return self.space.index(self.f(s, p, w))

    def transition_table(self, dspace: DistributionSpace | None = None) -> np.ndarray:
        """Integer table of next-state indices.

        Shape ``(|S|, |W|)`` when decoupled, ``(|M(n)|, |S|, |W|)`` when coupled.
        """
        labels, ws = self.space.labels, self.noise_values
        if not self.coupled:
            return np.array([[self._next_index(s, None, w) for w in ws] for s in labels],
                            dtype=np.int64)
        if dspace is None:
            raise ValueError("coupled dynamics need the distribution space")
        return np.array([[[self._next_index(s, p, w) for w in ws] for s in labels]
                         for p in dspace.probs], dtype=np.int64)

    def local_kernel(self, dspace: DistributionSpace | None = None) -> LocalKernel:
        S, pmf = len(self.space), self.noise_pmf
        table = self.transition_table(dspace)

        def tabulate(tab):
            mat = np.zeros((S, S))
            for s in range(S):
                np.add.at(mat[s], tab[s], pmf)
            return mat

        if not self.coupled:
            return LocalKernel.decoupled(self.space, tabulate(table))

        def fn(p):
            ws = self.noise_values
            tab = np.array([[self._next_index(s, p, w) for w in ws] for s in self.space.labels])
            return tabulate(tab)

        return LocalKernel(self.space, np.stack([tabulate(t) for t in table]),
                           dspace=dspace, fn=fn)


def local_kernel_from_noise(f: Callable, noise_pmf: Mapping[float, float], space: StateSpace,
                            dspace: DistributionSpace | None = None,
                            coupled: bool = False) -> LocalKernel:
    """``T(s'|s,m) = sum_w P_W(w) 1{s' = f(s,m,w)}``."""
    return NodeDynamics(space, f, dict(noise_pmf), coupled).local_kernel(dspace)


class TransitionKernel:
    """Row-stochastic matrix over M(n) with memoized powers.

    Row ``i`` is the law of the next empirical distribution given atom ``i``.
    """

    def __init__(self, dspace: DistributionSpace, matrix):
        mat = np.array(matrix, dtype=float)
        K = len(dspace)
        if mat.shape != (K, K):
            raise ValueError(f"kernel shape {mat.shape} does not match |M(n)|={K}")
        mat = _clean_rows(mat)
        mat.setflags(write=False)
        self.dspace = dspace
        self.matrix = mat
        self._powers: list[np.ndarray] = [np.eye(K), mat]
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def power(self, y: int) -> np.ndarray:
        if y < 0:
            raise ValueError("power must be nonnegative")
        with self._lock:
            while len(self._powers) <= y:
                nxt = self._powers[-1] @ self.matrix
                nxt.setflags(write=False)
                self._powers.append(nxt)
            return self._powers[y]

    def powers(self, y_max: int) -> np.ndarray:
        """Stacked ``T^0 .. T^y_max`` with shape ``(y_max+1, K, K)``."""
        self.power(y_max)
        return np.stack(self._powers[: y_max + 1])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["from\\to"] + [_counts_label(c) for c in self.dspace.counts]
        w.writerow(header)
        for c, row in zip(self.dspace.counts, self.matrix):
            w.writerow([_counts_label(c)] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, dspace: DistributionSpace) -> "TransitionKernel":
        text = source if "\n" in str(source) else open(source).read()
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        expected = [_counts_label(c) for c in dspace.counts]
        if header[1:] != expected or [r[0] for r in body] != expected:
            raise ValueError("CSV header does not match the canonical M(n) order")
        return cls(dspace, [[float(v) for v in r[1:]] for r in body])


def _counts_label(counts) -> str:
    return ":".join(str(int(c)) for c in counts)


def _clean_rows(mat: np.ndarray) -> np.ndarray:
    if mat.size and mat.min() < -ROW_TOL:
        raise ValueError(f"kernel has negative entries (min {mat.min():.3g})")
    mat = np.where(mat < 0, 0.0, mat)
    sums = mat.sum(axis=1)
    err = np.abs(sums - 1.0).max()
    if err > ROW_TOL:
        raise ValueError(f"kernel rows must sum to 1 (max error {err:.3g})")
    return mat / sums[:, None]


def _multinomial_outcomes(total: int, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All allocations of ``total`` nodes over the states, with their pmf."""
    support = np.flatnonzero(probs > 0)
    # allocate only over states the row can reach, then scatter back
    sub = _composition_array(total, len(support))
    logp = np.log(probs[support])
    logpmf = gammaln(total + 1) - gammaln(sub + 1).sum(axis=1) + (sub * logp).sum(axis=1)
    comps = np.zeros((sub.shape[0], len(probs)), dtype=np.int64)
    comps[:, support] = sub
    return comps, np.exp(logpmf)


def build_kernel_exact(local: LocalKernel, n: int | None = None,
                       dspace: DistributionSpace | None = None,
                       cap: int = DENSE_KERNEL_CAP) -> TransitionKernel:
    """Exact transition matrix of the empirical distribution under i.i.d. noise.

    For each atom ``m`` the ``n*m(s)`` nodes currently in state ``s`` move
    independently according to row ``T(.|s,m)``; the next count vector is the
    sum over source states of these multinomial allocations.
    """
    if dspace is None:
        if n is None:
            raise ValueError("give either n or dspace")
        dspace = local.dspace if (local.dspace is not None and local.dspace.n == n) \
            else DistributionSpace(n, local.space)
    K = count_empirical_distributions(dspace.n, len(local.space))
    if K > cap:
        raise StateSpaceTooLarge(
            f"|M(n)| = {K} exceeds the dense-kernel cap {cap}; "
            "use Monte-Carlo kernel estimate instead")
    mat = np.zeros((K, K))
    S = len(local.space)
    for i, counts in enumerate(dspace.counts):
        T = local.matrix_for(i)
        vecs = np.zeros((1, S), dtype=np.int64)
        probs = np.ones(1)
        for s, c in enumerate(counts):
            if c == 0:
                continue
            comps, pmf = _multinomial_outcomes(int(c), T[s])
            vecs = (vecs[:, None, :] + comps[None, :, :]).reshape(-1, S)
            probs = (probs[:, None] * pmf[None, :]).ravel()
            if dspace.packed:
                # count vectors add without carry in base n+1, so merge on keys
                _, first, inv = np.unique(dspace.keys(vecs), return_index=True,
                                          return_inverse=True)
            else:
                _, first, inv = np.unique(vecs, axis=0, return_index=True,
                                          return_inverse=True)
            vecs = vecs[first]
            probs = np.bincount(inv.ravel(), weights=probs, minlength=len(first))
        np.add.at(mat[i], np.atleast_1d(dspace.index_of(vecs)), probs)
    return TransitionKernel(dspace, mat)


def deep_ck_marginal(m: EmpiricalDistribution, s_target: int, local: LocalKernel,
                     dspace: DistributionSpace | None = None) -> np.ndarray:
    """Law of ``n * m_{t+1}(s_target)`` given ``m_t = m``.

    Convolution over source states of ``Binomial(n*m(s), T(s_target|s,m))``
    (a point mass at zero when ``m(s) = 0``).  Entry ``y`` is
    ``P(m_{t+1}(s_target) = y/n | m)``.
    """
    counts = np.asarray(m.counts)
    if local.coupled:
        if dspace is None:
            dspace = local.dspace
        T = local.matrix_for(dspace.index_of(counts))
    else:
        T = local.matrices
    out = np.ones(1)
    for s, c in enumerate(counts):
        if c == 0:
            continue
        out = np.convolve(out, binom.pmf(np.arange(c + 1), c, T[s, s_target]))
    return out


def kernel_power(kernel: TransitionKernel, y: int) -> np.ndarray:
    return kernel.power(y)


def marginals_from_kernel(kernel: TransitionKernel, atom: int, s_target: int) -> np.ndarray:
    """Marginalize a kernel row onto the count of one state."""
    counts = kernel.dspace.counts[:, s_target]
    return np.bincount(counts, weights=kernel.matrix[atom], minlength=kernel.dspace.n + 1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def estimate_local_kernel(transitions: Sequence[tuple[int, int]], size: int,
                          prior: float = 0.0) -> np.ndarray:
    """Frequency estimate of a decoupled kernel from observed (s, s') index pairs."""
    counts = np.full((size, size), float(prior))
    for s, s2 in transitions:
        counts[s, s2] += 1
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        est = np.where(totals > 0, counts / totals, np.eye(size))
    return est
