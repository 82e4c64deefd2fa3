"""Low-rank matrix completion with the nuclear-minus-Frobenius regularizer.

Submodules
----------
linalg        observed-entry containers, factor pairs, thin SVD
regularizers  spectral penalties and their proximal maps
solvers       proximal and factored gradient solvers
data          synthetic generator, triplet loader, splits, Laplacians
metrics       NMSE, RMSE, numerical rank
oracles       brute-force reference checks for the prox maps
cli           experiment runner
"""
from .linalg import FactorPair, NumericalError, ObservedMatrix, thin_svd
from .metrics import EvaluationReport, nmse, numerical_rank, rmse
from .regularizers import (
    RegularizerKind,
    RegularizerSpec,
    prox_l12,
    prox_nnfn,
    prox_scalar,
    prox_spectral,
)
from .solvers import SolverConfig, SolveTrace, Status, solve_factored, solve_proximal

__all__ = [
    "FactorPair", "NumericalError", "ObservedMatrix", "thin_svd",
    "EvaluationReport", "nmse", "numerical_rank", "rmse",
    "RegularizerKind", "RegularizerSpec", "prox_l12", "prox_nnfn", "prox_scalar",
    "prox_spectral", "SolverConfig", "SolveTrace", "Status", "solve_factored",
    "solve_proximal",
]
