"""Hierarchical redundancy resolution for redundant robots.

Prioritized stacks of equality and inequality constraints are solved at
velocity, acceleration or torque level with a saturation-based active-set
strategy, an optimality-checked variant, and an independent QP oracle.
"""

from redsolve.linalg import WeightMatrix
from redsolve.solvers.types import AssembledLevel, HierarchyProblem, SolveOptions

__all__ = [
    "WeightMatrix",
    "AssembledLevel",
    "HierarchyProblem",
    "SolveOptions",
]

__version__ = "0.1.0"
