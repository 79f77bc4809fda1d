"""Collect-or-estimate scheduling for networked data.

A decision maker tracks the empirical distribution of node states in a
network (or a weighted state average under linear dynamics) and decides at
every step whether to pay for fresh data or to estimate it from the last
credible observation.
"""

__version__ = "0.1.0"

from .chain_dynamics import (  # noqa: F401
    DistributionSpace,
    EmpiricalDistribution,
    LocalKernel,
    NodeDynamics,
    StateSpace,
    TransitionKernel,
    build_kernel_exact,
    deep_ck_marginal,
    enumerate_empirical_distributions,
    local_kernel_from_noise,
)
from .planning import (  # noqa: F401
    ChainProblem,
    ValueTable,
    extract_strategy,
    truncation_index,
    value_iteration,
)
