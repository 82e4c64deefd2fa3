"""Linear-algebra primitives shared by the regularizers and solvers.

Observed entries are stored as coordinate triplets sorted by ``(row, col)``
so that a CSR view of any per-entry value array can be built without
re-sorting.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp


class NumericalError(RuntimeError):
    """A numerical kernel failed to produce a trustworthy result."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ObservedMatrix:
    """Sparse set of observed entries of an ``shape[0] x shape[1]`` matrix.

    Entries are kept in canonical row-major order. Duplicate positions are
    rejected rather than silently merged.
    """

    shape: tuple[int, int]
    row: np.ndarray
    col: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        m, n = (int(s) for s in self.shape)
        if m < 1 or n < 1:
            raise ValueError(f"shape must be positive, got {self.shape}")
        row = np.asarray(self.row, dtype=np.int64).ravel()
        col = np.asarray(self.col, dtype=np.int64).ravel()
        value = np.asarray(self.value, dtype=np.float64).ravel()
        if not (row.size == col.size == value.size):
            raise ValueError("row, col and value must have equal length")
        if row.size:
            if row.min() < 0 or row.max() >= m or col.min() < 0 or col.max() >= n:
                raise ValueError(f"index out of range for shape {(m, n)}")
            if not np.all(np.isfinite(value)):
                raise ValueError("observed values must be finite")
        order = np.lexsort((col, row))
        row, col, value = row[order], col[order], value[order]
        if row.size > 1:
            dup = (np.diff(row) == 0) & (np.diff(col) == 0)
            if dup.any():
                i = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate entry at ({row[i]}, {col[i]})")
        object.__setattr__(self, "shape", (m, n))
        object.__setattr__(self, "row", _readonly(row))
        object.__setattr__(self, "col", _readonly(col))
        object.__setattr__(self, "value", _readonly(value))

    @classmethod
    def empty(cls, shape) -> "ObservedMatrix":
        return cls(shape, np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))

    @classmethod
    def from_dense(cls, M: np.ndarray, mask: np.ndarray | None = None) -> "ObservedMatrix":
        """Observe ``M`` on ``mask`` (all entries when ``mask`` is None)."""
        M = np.asarray(M, dtype=float)
        if mask is None:
            mask = np.ones(M.shape, dtype=bool)
        r, c = np.nonzero(mask)
        return cls(M.shape, r, c, M[r, c])

    @property
    def nnz(self) -> int:
        return int(self.value.size)

    @property
    def sparsity(self) -> float:
        return self.nnz / (self.shape[0] * self.shape[1])

    def with_values(self, value: np.ndarray) -> "ObservedMatrix":
        """Same index set, new values; skips re-validation of the indices."""
        value = np.asarray(value, dtype=np.float64).ravel()
        if value.size != self.nnz:
            raise ValueError("value length does not match nnz")
        out = object.__new__(ObservedMatrix)
        object.__setattr__(out, "shape", self.shape)
        object.__setattr__(out, "row", self.row)
        object.__setattr__(out, "col", self.col)
        object.__setattr__(out, "value", _readonly(value.copy()))
        return out

    def subset(self, idx: np.ndarray) -> "ObservedMatrix":
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        out = object.__new__(ObservedMatrix)
        object.__setattr__(out, "shape", self.shape)
        object.__setattr__(out, "row", _readonly(self.row[idx]))
        object.__setattr__(out, "col", _readonly(self.col[idx]))
        object.__setattr__(out, "value", _readonly(self.value[idx]))
        return out

    def mask(self) -> np.ndarray:
        M = np.zeros(self.shape, dtype=bool)
        M[self.row, self.col] = True
        return M

    def to_dense(self, fill: float = 0.0) -> np.ndarray:
        M = np.full(self.shape, fill, dtype=float)
        M[self.row, self.col] = self.value
        return M

    def indptr(self) -> np.ndarray:
        counts = np.bincount(self.row, minlength=self.shape[0])
        return np.concatenate([[0], np.cumsum(counts)])

    def to_csr(self, value: np.ndarray | None = None) -> sp.csr_matrix:
        """CSR matrix on this index set, optionally with replacement values."""
        data = self.value if value is None else value
        return sp.csr_matrix((data, self.col, self.indptr()), shape=self.shape)


@dataclass(frozen=True)
class FactorPair:
    """Thin factors representing ``X = W @ H.T``."""

    W: np.ndarray
    H: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        H = np.asarray(self.H, dtype=float)
        if W.ndim != 2 or H.ndim != 2:
            raise ValueError("W and H must be 2-D")
        if W.shape[1] != H.shape[1] or W.shape[1] < 1:
            raise ValueError(f"inner dimensions disagree: {W.shape} vs {H.shape}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "H", H)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.W.shape[0], self.H.shape[0])

    @property
    def rank_k(self) -> int:
        return self.W.shape[1]

    def to_dense(self) -> np.ndarray:
        return self.W @ self.H.T

    def entries(self, row: np.ndarray, col: np.ndarray,
                workspace: "GatherWorkspace | None" = None) -> np.ndarray:
        """``X[row, col]`` without forming ``W @ H.T``.

        Passing a :class:`GatherWorkspace` reuses its buffers, which avoids
        re-allocating two ``nnz x k`` arrays on every call in solver loops.
        """
        if workspace is None:
            return np.einsum("ij,ij->i", self.W[row], self.H[col])
        bw, bh = workspace.buffers(len(row), self.rank_k)
        np.take(self.W, row, axis=0, out=bw, mode="clip")
        np.take(self.H, col, axis=0, out=bh, mode="clip")
        return np.einsum("ij,ij->i", bw, bh)

    def core_singular_values(self) -> np.ndarray:
        """Singular values of ``W @ H.T`` via a k x k core (no m x n SVD)."""
        Rw = np.linalg.qr(self.W, mode="r")
        Rh = np.linalg.qr(self.H, mode="r")
        return np.linalg.svd(Rw @ Rh.T, compute_uv=False)


class GatherWorkspace:
    """Reusable row-gather buffers for :meth:`FactorPair.entries`.

    Indices must already be validated; gathers run with ``mode="clip"``.
    """

    def __init__(self):
        self._bufs = None

    def buffers(self, n: int, k: int):
        if self._bufs is None or self._bufs[0].shape != (n, k):
            self._bufs = (np.empty((n, k)), np.empty((n, k)))
        return self._bufs


MatrixLike = Union[np.ndarray, FactorPair]


@dataclass(frozen=True)
class SpectralDecomposition:
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    @property
    def rank(self) -> int:
        return int(self.sigma.size)

    def reconstruct(self, sigma: np.ndarray | None = None) -> np.ndarray:
        """``U diag(sigma) V^T``; dropping zero singular values first."""
        s = self.sigma if sigma is None else np.asarray(sigma, dtype=float)
        nz = s != 0
        return (self.U[:, nz] * s[nz]) @ self.V[:, nz].T


def thin_svd(M: np.ndarray, rank: int | None = None) -> SpectralDecomposition:
    """Thin SVD with descending nonnegative singular values.

    Parameters
    ----------
    M : ndarray, shape (m, n)
    rank : int, optional
        Keep at most this many leading singular triplets. Small caps are
        computed from a partial eigendecomposition of the Gram matrix
        followed by an exact SVD of the projected m x r block, which is
        considerably cheaper than a full SVD for desk-scale matrices.

    Raises
    ------
    NumericalError
        If LAPACK fails to converge.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError("M must be 2-D")
    if not np.all(np.isfinite(M)):
        raise ValueError("M must be finite")
    m, n = M.shape
    r_full = min(m, n)
    if rank is not None and rank < 1:
        raise ValueError("rank cap must be >= 1")
    try:
        if rank is None or rank >= r_full // 2:
            U, s, Vt = np.linalg.svd(M, full_matrices=False)
            r = r_full if rank is None else min(rank, r_full)
            return SpectralDecomposition(U[:, :r], s[:r], Vt[:r].T)
        return _partial_svd(M, rank)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise NumericalError(f"SVD failed to converge: {exc}") from exc


def _partial_svd(M: np.ndarray, r: int) -> SpectralDecomposition:
    transpose = M.shape[0] < M.shape[1]
    A = M.T if transpose else M
    n = A.shape[1]
    _, V = scipy.linalg.eigh(A.T @ A, subset_by_index=[n - r, n - 1])
    # Re-orthogonalise through an exact SVD of the m x r projection.
    Ub, s, Qt = np.linalg.svd(A @ V, full_matrices=False)
    V = V @ Qt.T
    if transpose:
        return SpectralDecomposition(V, s, Ub)
    return SpectralDecomposition(Ub, s, V)


def observed_entries(X: MatrixLike, obs: ObservedMatrix) -> np.ndarray:
    """Values of ``X`` on the observed index set."""
    if isinstance(X, FactorPair):
        if X.shape != obs.shape:
            raise ValueError(f"shape mismatch: {X.shape} vs {obs.shape}")
        return X.entries(obs.row, obs.col)
    X = np.asarray(X)
    if X.shape != obs.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {obs.shape}")
    return X[obs.row, obs.col]


def sparse_residual(X: MatrixLike, obs: ObservedMatrix) -> ObservedMatrix:
    """``P_Omega(X - O)`` as an ObservedMatrix on the same index set."""
    return obs.with_values(observed_entries(X, obs) - obs.value)


def factored_frobenius_norm(W: np.ndarray, H: np.ndarray) -> float:
    """``||W H^T||_F`` from the k x k Gram matrices only."""
    W = np.asarray(W, dtype=float)
    H = np.asarray(H, dtype=float)
    if W.shape[1] != H.shape[1]:
        raise ValueError(f"inner dimensions disagree: {W.shape} vs {H.shape}")
    # Tr((H^T H)(W^T W)) as an elementwise sum; both Grams are symmetric.
    sq = float(np.sum((H.T @ H) * (W.T @ W)))
    return float(np.sqrt(max(sq, 0.0)))
