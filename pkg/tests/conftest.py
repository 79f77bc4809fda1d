import itertools
from fractions import Fraction

import numpy as np
import pytest

from collect_estimate.chain_dynamics import DistributionSpace, LocalKernel, StateSpace

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE_RESULTS: dict = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (bool(passed), detail)
    print(f"[criterion {criterion:2d}] {'PASS' if passed else 'FAIL'}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} | {detail}")


def brute_force_kernel(local: LocalKernel, dspace: DistributionSpace, exact: bool = False):
    """Transition matrix of M(n) by enumerating every joint node transition.

    Independent of the multinomial construction: walks all |S|^n next-state
    tuples for each starting atom.  With ``exact=True`` the arithmetic is
    done in ``Fraction`` (kernel entries are converted exactly from floats).
    """
    S = len(dspace.space)
    K = len(dspace)
    lookup = {tuple(c): i for i, c in enumerate(dspace.counts)}
    out = [[Fraction(0)] * K for _ in range(K)] if exact else np.zeros((K, K))
    for i, counts in enumerate(dspace.counts):
        T = local.matrix_for(i)
        nodes = [s for s in range(S) for _ in range(counts[s])]
        for nxt in itertools.product(range(S), repeat=len(nodes)):
            if exact:
                p = Fraction(1)
                for s, s2 in zip(nodes, nxt):
                    p *= Fraction(float(T[s, s2]))
            else:
                p = 1.0
                for s, s2 in zip(nodes, nxt):
                    p *= T[s, s2]
            j = lookup[tuple(np.bincount(nxt, minlength=S))]
            out[i][j] += p
    return out


def random_local_kernel(rng, S: int, dspace=None, coupled=False, zeros=True):
    """Random row-stochastic kernel; some entries forced to zero when ``zeros``."""
    space = StateSpace(tuple(float(v) for v in range(S)))

    def draw():
        M = rng.random((S, S))
        if zeros:
            M[rng.random((S, S)) < 0.25] = 0.0
            M[np.arange(S), rng.integers(0, S, S)] += 0.1
        return M / M.sum(axis=1, keepdims=True)

    if not coupled:
        return space, LocalKernel.decoupled(space, draw())
    base, tilt = draw(), draw()

    def fn(p):
        # kernel affine in the first coordinate of p
        w = float(p[0])
        return (1 - w) * base + w * tilt

    ds = dspace if dspace is not None else None
    return space, fn if ds is None else LocalKernel.from_function(space, fn, ds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def two_state():
    space = StateSpace((0.0, 1.0))
    local = LocalKernel.decoupled(space, [[0.9, 0.1], [0.2, 0.8]])
    return space, local
