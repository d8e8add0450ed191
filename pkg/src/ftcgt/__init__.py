"""Gradient tracking (Aug-DGM) over finite-time consensus matrix sequences.

Modules
-------
graph
    Topologies and static combination matrices.
ftc
    Exact and inexact finite-time consensus sequences.
problem
    Decentralized least-squares problems and their constants.
optimizer
    The Aug-DGM recursion, diagnostics and a scikit-learn estimator.
bounds
    Closed-form performance constants.
experiments
    Config-driven Monte-Carlo experiments and plots.
"""

from .ftc import MatrixSequence, exact_sequence, metropolis_sequence
from .graph import Graph, build_graph
from .optimizer import AugDGMRegressor, run
from .problem import LeastSquaresProblem, generate

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "build_graph",
    "MatrixSequence",
    "exact_sequence",
    "metropolis_sequence",
    "LeastSquaresProblem",
    "generate",
    "run",
    "AugDGMRegressor",
]
