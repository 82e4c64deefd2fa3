"""Recovery metrics and numerical rank."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .linalg import FactorPair, MatrixLike, ObservedMatrix, observed_entries


class MetricName(str, enum.Enum):
    NMSE = "NMSE"
    RMSE = "RMSE"


@dataclass(frozen=True)
class EvaluationReport:
    metric_name: MetricName
    value: float
    nnz_evaluated: int
    recovered_rank: int
    wall_time_seconds: float

    def __post_init__(self):
        object.__setattr__(self, "metric_name", MetricName(self.metric_name))
        if not self.value >= 0:
            raise ValueError("metric value must be >= 0")
        if self.nnz_evaluated < 1:
            raise ValueError("nnz_evaluated must be >= 1")


def _mask_indices(eval_mask, shape):
    if isinstance(eval_mask, ObservedMatrix):
        if eval_mask.shape != tuple(shape):
            raise ValueError(f"mask shape {eval_mask.shape} does not match {tuple(shape)}")
        return eval_mask.row, eval_mask.col
    mask = np.asarray(eval_mask, dtype=bool)
    if mask.shape != tuple(shape):
        raise ValueError(f"mask shape {mask.shape} does not match {tuple(shape)}")
    return np.nonzero(mask)


def _entries(X: MatrixLike, row, col) -> np.ndarray:
    if isinstance(X, FactorPair):
        return X.entries(row, col)
    return np.asarray(X, dtype=float)[row, col]


def nmse(X_bar: MatrixLike, G: np.ndarray, eval_mask) -> float:
    """``||P(X_bar - G)||_F / ||P(G)||_F`` over the positions in ``eval_mask``.

    This is a ratio of norms, not of squared norms.

    Parameters
    ----------
    eval_mask : ObservedMatrix or bool ndarray
        Index set to evaluate on, typically the never-observed positions.
    """
    G = np.asarray(G, dtype=float)
    if isinstance(X_bar, FactorPair) and X_bar.shape != G.shape:
        raise ValueError(f"shape mismatch: {X_bar.shape} vs {G.shape}")
    row, col = _mask_indices(eval_mask, G.shape)
    if len(row) == 0:
        raise ValueError("evaluation mask is empty")
    g = G[row, col]
    den = np.linalg.norm(g)
    if den == 0:
        raise ValueError("ground truth is zero on the evaluation mask")
    return float(np.linalg.norm(_entries(X_bar, row, col) - g) / den)


def rmse(X_bar: MatrixLike, test: ObservedMatrix) -> float:
    """Root mean squared error over the entries of ``test``."""
    if test.nnz == 0:
        raise ValueError("test set is empty")
    err = observed_entries(X_bar, test) - test.value
    return float(np.sqrt(np.mean(err * err)))


def singular_values(X: MatrixLike) -> np.ndarray:
    if isinstance(X, FactorPair):
        return X.core_singular_values()
    X = np.asarray(X, dtype=float)
    if not np.all(np.isfinite(X)):
        raise ValueError("X must be finite")
    return np.linalg.svd(X, compute_uv=False)


def numerical_rank(X: MatrixLike, rel_tol: float = 1e-8) -> int:
    """Number of singular values above ``rel_tol * sigma_1``."""
    s = singular_values(X)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))
