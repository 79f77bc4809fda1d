"""Per-step cost models ``c(m, m_hat, a)``.

Every model is a vectorized callable: ``m`` and ``m_hat`` are probability
vectors over S (any leading batch shape), ``a`` is 0 or 1 broadcastable to
the batch shape.  All costs are nonnegative.
"""

from __future__ import annotations

import numpy as np


class CostModel:
    name = "cost"
    #: upper bound on the per-step cost when known analytically
    c_max: float | None = None

    def __call__(self, m, m_hat, a):
        raise NotImplementedError

    def metadata(self) -> dict:
        return {"name": self.name}

    def scaled(self, factor: float) -> "CostModel":
        return ScaledCost(self, factor)


class ScaledCost(CostModel):
    def __init__(self, base: CostModel, factor: float):
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        self.base, self.factor = base, float(factor)
        self.name = f"{base.name}*{factor:g}"
        self.c_max = None if base.c_max is None else base.c_max * self.factor

    def __call__(self, m, m_hat, a):
        return self.factor * self.base(m, m_hat, a)


class ZeroCost(CostModel):
    name = "zero"
    c_max = 0.0

    def __call__(self, m, m_hat, a):
        shape = np.broadcast_shapes(np.shape(m)[:-1], np.shape(m_hat)[:-1], np.shape(a))
        return np.zeros(shape)


class FeeOnlyCost(CostModel):
    """Pure collection fee: ``fee * a``, no estimation penalty."""

    name = "fee_only"

    def __init__(self, fee: float = 1.0):
        self.fee = float(fee)
        self.c_max = self.fee

    def __call__(self, m, m_hat, a):
        shape = np.broadcast_shapes(np.shape(m)[:-1], np.shape(m_hat)[:-1], np.shape(a))
        return np.broadcast_to(self.fee * np.asarray(a, dtype=float), shape).copy()


class WeightedAbsCost(CostModel):
    """``|s| |s - s_hat| + fee * a`` on the label means of ``m`` and ``m_hat``.

    For a single node (``n = 1``) ``m`` is a point mass and the label mean is
    the node's state, which gives the prioritized sensor cost.
    """

    name = "weighted_abs"

    def __init__(self, labels, fee: float):
        self.labels = np.asarray(labels, dtype=float)
        self.fee = float(fee)
        span = self.labels.max() - self.labels.min()
        self.c_max = float(np.abs(self.labels).max() * span + self.fee)

    def __call__(self, m, m_hat, a):
        s = np.asarray(m) @ self.labels
        s_hat = np.asarray(m_hat) @ self.labels
        return np.abs(s) * np.abs(s - s_hat) + self.fee * np.asarray(a, dtype=float)

    def metadata(self):
        return {"name": self.name, "fee": self.fee}


class KLCost(CostModel):
    """``KL(m || m_hat) + fee * a`` in nats.

    Convention ``0 log 0 = 0``.  Where ``m(s) > 0`` but ``m_hat(s) = 0`` the
    estimate is floored at ``floor`` (default ``1/(10n)``) and renormalized,
    which keeps the cost finite.
    """

    name = "kl_plus_fee"

    def __init__(self, fee: float, n: int, floor: float | None = None):
        self.fee = float(fee)
        self.n = int(n)
        self.floor = 1.0 / (10 * self.n) if floor is None else float(floor)
        f = self.floor / (1.0 + self.floor)
        # worst case: all mass on a state the estimate floored
        self.c_max = float(-np.log(f) + self.fee)

    def __call__(self, m, m_hat, a):
        m = np.asarray(m, dtype=float)
        m_hat = np.asarray(m_hat, dtype=float)
        m, m_hat = np.broadcast_arrays(m, m_hat)
        need = (m_hat <= 0) & (m > 0)
        if np.any(need):
            fixed = np.where(need, self.floor, m_hat)
            fixed = fixed / fixed.sum(axis=-1, keepdims=True)
            rows = need.any(axis=-1, keepdims=True)
            m_hat = np.where(rows, fixed, m_hat)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(m > 0, m * np.log(m / m_hat), 0.0)
        kl = np.maximum(terms.sum(axis=-1), 0.0)
        return kl + self.fee * np.asarray(a, dtype=float)

    def metadata(self):
        return {"name": self.name, "fee": self.fee, "floor": self.floor,
                "floor_rule": "m_hat(s)=0 with m(s)>0 floored at floor, then renormalized"}


class QuadraticCost(CostModel):
    """``||m - m_hat||_2^2 + fee * a``."""

    name = "quadratic_fee"

    def __init__(self, fee: float):
        self.fee = float(fee)
        self.c_max = 2.0 + self.fee

    def __call__(self, m, m_hat, a):
        d = np.asarray(m, dtype=float) - np.asarray(m_hat, dtype=float)
        return (d * d).sum(axis=-1) + self.fee * np.asarray(a, dtype=float)

    def metadata(self):
        return {"name": self.name, "fee": self.fee}


class SupNormCost(CostModel):
    """``scale * ||m - m_hat||_inf + fee * a``; Lipschitz constant ``scale``."""

    name = "linf_fee"

    def __init__(self, fee: float = 0.0, scale: float = 1.0):
        self.fee = float(fee)
        self.scale = float(scale)
        self.c_max = self.scale + self.fee

    def __call__(self, m, m_hat, a):
        d = np.abs(np.asarray(m, dtype=float) - np.asarray(m_hat, dtype=float))
        return self.scale * d.max(axis=-1) + self.fee * np.asarray(a, dtype=float)

    def metadata(self):
        return {"name": self.name, "fee": self.fee, "scale": self.scale}


class TableCost(CostModel):
    """Explicit table ``c[m_index, m_hat_index, a]`` over M(n) x M(n) x {0,1}.

    Estimates off the grid are snapped to the nearest atom (L1).
    """

    name = "custom_table"

    def __init__(self, table, atoms: np.ndarray):
        self.table = np.asarray(table, dtype=float)
        self.atoms = np.asarray(atoms, dtype=float)
        K = self.atoms.shape[0]
        if self.table.shape != (K, K, 2):
            raise ValueError(f"cost table must have shape ({K}, {K}, 2)")
        if np.any(self.table < 0):
            raise ValueError("cost table entries must be nonnegative")
        self.c_max = float(self.table.max())

    def _index(self, p):
        d = np.abs(np.asarray(p, dtype=float)[..., None, :] - self.atoms).sum(axis=-1)
        return d.argmin(axis=-1)

    def __call__(self, m, m_hat, a):
        i, j = self._index(m), self._index(m_hat)
        a = np.asarray(a, dtype=np.int64)
        i, j, a = np.broadcast_arrays(i, j, a)
        return self.table[i, j, a]


def cost_upper_bound(cost: CostModel, atoms: np.ndarray) -> float:
    """Exhaustive max of ``c`` over M(n) x M(n) x {0,1}."""
    atoms = np.asarray(atoms, dtype=float)
    best = 0.0
    for a in (0, 1):
        for chunk in np.array_split(np.arange(len(atoms)), max(1, len(atoms) // 256)):
            vals = cost(atoms[None, :, :], atoms[chunk][:, None, :], a)
            best = max(best, float(np.max(vals)))
    return best


def make_cost(name: str, *, labels=None, n: int | None = None, fee: float = 0.0,
              atoms=None, table=None, floor: float | None = None, scale: float = 1.0) -> CostModel:
    """Build a cost model from its configuration name."""
    key = name.replace("-", "_")
    if key == "weighted_abs":
        return WeightedAbsCost(labels, fee)
    if key == "kl_plus_fee":
        return KLCost(fee, n, floor)
    if key == "quadratic_fee":
        return QuadraticCost(fee)
    if key == "linf_fee":
        return SupNormCost(fee, scale)
    if key in ("custom_table", "custom"):
        return TableCost(table, atoms)
    if key == "fee_only":
        return FeeOnlyCost(fee)
    if key == "zero":
        return ZeroCost()
    raise ValueError(f"unknown cost model {name!r}")
