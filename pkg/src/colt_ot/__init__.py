"""Linear-time Wasserstein-1 distances on uniform grids.

The kernel ``exp(-C / delta)`` of the l1 cost and every IPOT iterate built
from it are collinear triangular (CoLT) matrices, so each proximal step can
run on O(N) vectors instead of N x N matrices.
"""

from .block import BlockColtRepr, block_cmv, block_w1, kernel_2d
from .colt import ColtRepr, FlopCounter, cmv, cmv_transpose, kernel_1d, timed_region
from .oracles import lp_transport_exact, w1_1d_exact
from .solvers import (
    NumericalFailure,
    Problem1D,
    Problem2D,
    fs1,
    fs2,
    ipot_dense,
    sinkhorn_dense,
)

__version__ = "0.1.0"

__all__ = [
    "BlockColtRepr",
    "ColtRepr",
    "FlopCounter",
    "NumericalFailure",
    "Problem1D",
    "Problem2D",
    "block_cmv",
    "block_w1",
    "cmv",
    "cmv_transpose",
    "fs1",
    "fs2",
    "ipot_dense",
    "kernel_1d",
    "kernel_2d",
    "lp_transport_exact",
    "sinkhorn_dense",
    "timed_region",
    "w1_1d_exact",
]
