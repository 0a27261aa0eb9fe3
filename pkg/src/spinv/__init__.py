"""Exact computation of the rank-3 complete-graph symplectic invariant T^4.

Sequential and parallel (master-worker family) evaluation with runtime
scheme switching.
"""

from .invariant import InvariantResult, inner_block, invariant_naive, invariant_optimized
from .polyarith import Polynomial, deserialize, serialize
from .schemes import RunConfig, RunStats, run

__version__ = "0.1.0"

__all__ = [
    "InvariantResult", "Polynomial", "RunConfig", "RunStats", "deserialize", "inner_block",
    "invariant_naive", "invariant_optimized", "run", "serialize",
]
