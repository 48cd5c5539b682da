"""Sparse domination of multilinear Calderon-Zygmund operators on finite
metric measure spaces, with brute-force reference implementations."""
from .lattice import Lattice, build_lattice, check_lattice
from .operators import FunctionTuple, Kernel
from .space import DominatingFunction, MetricMeasureSpace, default_dominating
from .sparse import DominationResult, SparseFamily, build_sparse_domination
from .weights import ExponentTuple, WeightTuple

__all__ = [
    "DominatingFunction", "DominationResult", "ExponentTuple", "FunctionTuple", "Kernel", "Lattice",
    "MetricMeasureSpace", "SparseFamily", "WeightTuple", "build_lattice", "build_sparse_domination",
    "check_lattice", "default_dominating",
]
