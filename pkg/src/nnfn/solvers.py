"""Matrix-completion drivers: the proximal algorithm and factored gradient descent.

Both solvers minimise ``0.5 * ||P_Omega(X - O)||_F^2 + lam * r(X)`` (plus an
optional graph-Laplacian smoothness term) and stop when the relative change of
the objective between consecutive iterations drops below ``rel_tol``.
"""
from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import (
    FactorPair,
    GatherWorkspace,
    MatrixLike,
    NumericalError,
    ObservedMatrix,
    factored_frobenius_norm,
    observed_entries,
    thin_svd,
)
from .regularizers import RegularizerKind, RegularizerSpec, prox_spectrum, regularizer_value

log = logging.getLogger(__name__)

__all__ = [
    "FactorPair", "SolverConfig", "SolveTrace", "TraceRecord", "Status",
    "loss_value", "full_objective", "factored_objective", "factored_gradients",
    "laplacian_term", "solve_proximal", "solve_factored",
]


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class SolverConfig:
    regularizer: RegularizerSpec
    stepsize: float
    max_iters: int = 10000
    rel_tol: float = 1e-4
    rank_k: int = 10
    rank_cap: Optional[int] = None
    seed: int = 0
    laplacian_weight: float = 0.0
    zero_guard_eps: float = 1e-12
    eval_every: int = 1
    divergence_patience: int = 50
    adaptive_svd: bool = True

    def __post_init__(self):
        if not self.stepsize > 0:
            raise ValueError("stepsize must be > 0")
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be > 0")
        if self.rank_k < 1:
            raise ValueError("rank_k must be >= 1")
        if self.rank_cap is not None and self.rank_cap < 1:
            raise ValueError("rank_cap must be >= 1")
        if self.laplacian_weight < 0:
            raise ValueError("laplacian_weight must be >= 0")
        if self.max_iters < 1 or self.eval_every < 1:
            raise ValueError("max_iters and eval_every must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    elapsed_s: float
    val_error: Optional[float]
    rank: int


@dataclass
class SolveTrace:
    records: list[TraceRecord] = field(default_factory=list)
    status: Status = Status.MAX_ITERS

    def append(self, rec: TraceRecord) -> None:
        if self.records:
            last = self.records[-1]
            if rec.iteration <= last.iteration or rec.elapsed_s < last.elapsed_s:
                raise ValueError("trace must be strictly increasing in iteration and time")
        self.records.append(rec)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def wall_time(self) -> float:
        return self.records[-1].elapsed_s if self.records else 0.0

    @property
    def n_iters(self) -> int:
        return self.records[-1].iteration if self.records else 0


# Objectives and gradients ---------------------------------------------------

def loss_value(X: MatrixLike, obs: ObservedMatrix) -> float:
    """``0.5 * ||P_Omega(X - O)||_F^2``."""
    r = observed_entries(X, obs) - obs.value
    return 0.5 * float(r @ r)


def full_objective(X: np.ndarray, obs: ObservedMatrix, spec: RegularizerSpec) -> float:
    """Loss plus ``lam * r(X)`` with ``r`` evaluated on the singular values."""
    reg = 0.0
    if spec.lam > 0:
        s = np.linalg.svd(np.asarray(X, dtype=float), compute_uv=False)
        reg = spec.lam * regularizer_value(spec, s)
    return loss_value(X, obs) + reg


def factored_objective(fp: FactorPair, obs: ObservedMatrix, lam: float,
                       subtract_frobenius: bool = True, *, residual=None) -> float:
    """Factored NNFN objective; ``subtract_frobenius=False`` gives factored nuclear.

    ``residual`` may carry precomputed ``X - O`` values on the observed entries.
    """
    if residual is None:
        residual = observed_entries(fp, obs) - obs.value
    val = 0.5 * float(residual @ residual)
    val += 0.5 * lam * (np.sum(fp.W ** 2) + np.sum(fp.H ** 2))
    if subtract_frobenius and lam > 0:
        val -= lam * factored_frobenius_norm(fp.W, fp.H)
    return float(val)


def factored_gradients(fp: FactorPair, obs: ObservedMatrix, lam: float,
                       zero_guard_eps: float = 1e-12, subtract_frobenius: bool = True,
                       *, residual=None, _csr=None):
    """Gradients of the factored objective with respect to ``W`` and ``H``.

    ``grad_W = S H + lam W - c W (H^T H)`` and symmetrically for ``H``, where
    ``S = P_Omega(W H^T - O)`` is kept sparse and ``c = lam / ||W H^T||_F``.
    ``c`` is set to 0 when ``||W H^T||_F < zero_guard_eps``.
    """
    if fp.shape != obs.shape:
        raise ValueError(f"shape mismatch: {fp.shape} vs {obs.shape}")
    W, H = fp.W, fp.H
    if residual is None:
        residual = fp.entries(obs.row, obs.col) - obs.value
    if _csr is None:
        S = obs.to_csr(residual)
    else:
        # Observed entries are stored in CSR order, so the data can be swapped in place.
        S = _csr
        S.data[:] = residual
    gW = S @ H + lam * W
    gH = S.T @ W + lam * H
    if subtract_frobenius and lam > 0:
        HtH, WtW = H.T @ H, W.T @ W
        fro = float(np.sqrt(max(np.sum(HtH * WtW), 0.0)))
        if fro >= zero_guard_eps:
            c = lam / fro
            gW -= c * (W @ HtH)
            gH -= c * (H @ WtW)
    return gW, gH


def _check_laplacian(L: np.ndarray, weight: float) -> np.ndarray:
    if weight < 0:
        raise ValueError("laplacian weight must be >= 0")
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError("Laplacian must be square")
    if np.max(np.abs(L - L.T), initial=0.0) > 1e-10:
        raise ValueError("Laplacian must be symmetric")
    return L


def laplacian_term(X: MatrixLike, L: np.ndarray, weight: float):
    """Graph smoothness ``weight * Tr(X^T L X)`` and its gradient.

    For a dense ``X`` the gradient is one m x n array; for a FactorPair it is
    the pair ``(grad_W, grad_H)`` computed through k x k cores only.
    """
    L = _check_laplacian(L, weight)
    if isinstance(X, FactorPair):
        W, H = X.W, X.H
        if L.shape[0] != W.shape[0]:
            raise ValueError("Laplacian size must match the number of rows")
        if weight == 0:
            return 0.0, (np.zeros_like(W), np.zeros_like(H))
        LW = L @ W
        HtH = H.T @ H
        WtLW = W.T @ LW
        value = weight * float(np.sum(WtLW * HtH))
        return value, (2 * weight * LW @ HtH, 2 * weight * H @ WtLW)
    X = np.asarray(X, dtype=float)
    if L.shape[0] != X.shape[0]:
        raise ValueError("Laplacian size must match the number of rows")
    if weight == 0:
        return 0.0, np.zeros_like(X)
    LX = L @ X
    return weight * float(np.sum(X * LX)), 2 * weight * LX


# Shared iteration bookkeeping --------------------------------------------------

class _Clock:
    """Wall clock that can be paused while validation metrics are computed."""

    def __init__(self):
        self._start = time.perf_counter()
        self._paused = 0.0

    def elapsed(self) -> float:
        return time.perf_counter() - self._start - self._paused

    def pause(self):
        t0 = time.perf_counter()
        return lambda: setattr(self, "_paused", self._paused + time.perf_counter() - t0)


def _relative_change(prev: float, cur: float) -> float:
    return abs(prev - cur) / max(1.0, abs(prev))


Evaluator = Callable[[MatrixLike], float]


def _default_evaluator(validation: ObservedMatrix | None) -> Evaluator | None:
    if validation is None or validation.nnz == 0:
        return None

    def rmse(X):
        r = observed_entries(X, validation) - validation.value
        return float(np.sqrt(r @ r / r.size))

    return rmse


def _record(trace, clock, it, obj, rank_fn, X_fn, evaluator, cfg, force=False):
    """Append a trace row; bookkeeping time is excluded from the clock."""
    resume = clock.pause()
    val = None
    if evaluator is not None and (force or it % cfg.eval_every == 0):
        val = evaluator(X_fn())
    rank = rank_fn()
    resume()
    trace.append(TraceRecord(it, obj, clock.elapsed(), val, rank))


# Proximal algorithm -------------------------------------------------------------

def solve_proximal(obs: ObservedMatrix, cfg: SolverConfig,
                   validation: ObservedMatrix | None = None, *,
                   laplacian: np.ndarray | None = None,
                   evaluator: Evaluator | None = None,
                   X0: np.ndarray | None = None):
    """Proximal gradient on the full matrix with any spectral regularizer.

    Each iteration takes a gradient step on the loss,
    ``Z = X - eta * P_Omega(X - O)``, then applies the prox of
    ``eta * lam * r`` to ``Z``. When ``cfg.rank_cap`` is set only the
    leading ``rank_cap`` singular triplets of ``Z`` are kept. Otherwise, for
    NNFN and the nuclear norm, the SVD is truncated adaptively at a level
    the prox maps to zero, which matches the full-SVD iterate (turn off with
    ``cfg.adaptive_svd``).

    Returns
    -------
    X : ndarray
        Final iterate (the last finite one on numerical failure).
    trace : SolveTrace
    """
    if obs.nnz == 0:
        raise ValueError("no observed entries")
    spec = cfg.regularizer
    step_spec = spec.scaled(cfg.stepsize)
    eta = cfg.stepsize
    m, n = obs.shape
    lap_w = cfg.laplacian_weight if laplacian is not None else 0.0
    if lap_w > 0:
        laplacian = _check_laplacian(laplacian, lap_w)
    evaluator = evaluator or _default_evaluator(validation)

    X = np.zeros((m, n)) if X0 is None else np.array(X0, dtype=float)
    rows, cols = obs.row, obs.col

    def objective(X, sigma):
        r = X[rows, cols] - obs.value
        val = 0.5 * float(r @ r) + spec.lam * regularizer_value(spec, sigma)
        if lap_w > 0:
            val += laplacian_term(X, laplacian, lap_w)[0]
        return val

    trace = SolveTrace()
    clock = _Clock()
    sigma0 = np.linalg.svd(X, compute_uv=False) if X0 is not None else np.zeros(1)
    prev = objective(X, sigma0)
    _record(trace, clock, 0, prev, lambda: int(np.count_nonzero(sigma0)), lambda: X,
            evaluator, cfg, force=True)
    # NNFN and nuclear prox both send every singular value <= eta*lam to zero,
    # so a partial SVD reaching below that level gives the full-SVD result.
    truncate = (cfg.adaptive_svd and cfg.rank_cap is None
                and spec.kind in (RegularizerKind.NNFN, RegularizerKind.NUCLEAR))
    svd_rank = 10
    status = Status.MAX_ITERS
    for it in range(1, cfg.max_iters + 1):
        Z = X.copy()
        Z[rows, cols] -= eta * (X[rows, cols] - obs.value)
        if lap_w > 0:
            Z -= eta * laplacian_term(X, laplacian, lap_w)[1]
        try:
            if truncate:
                dec, svd_rank = _truncated_svd_for_prox(Z, step_spec.lam, svd_rank)
            else:
                dec = thin_svd(Z, cfg.rank_cap)
        except (NumericalError, ValueError) as exc:
            log.warning("proximal solver stopped at iteration %d: %s", it, exc)
            status = Status.NUMERICAL_FAILURE
            break
        sig = prox_spectrum(step_spec, dec.sigma)
        X_new = dec.reconstruct(sig)
        cur = objective(X_new, sig)
        if not np.isfinite(cur):
            status = Status.NUMERICAL_FAILURE
            break
        X = X_new
        if truncate:
            svd_rank = int(np.count_nonzero(sig)) + 5
        done = _relative_change(prev, cur) < cfg.rel_tol
        _record(trace, clock, it, cur, lambda: int(np.count_nonzero(sig)), lambda: X,
                evaluator, cfg, force=done)
        prev = cur
        if done:
            status = Status.CONVERGED
            break
    trace.status = status
    return X, trace


def _truncated_svd_for_prox(Z: np.ndarray, threshold: float, guess: int):
    """Leading singular triplets of ``Z`` down to the first one <= ``threshold``.

    The rank tried starts at ``guess`` and doubles until the smallest
    computed singular value is at or below ``threshold``; past half the
    full rank a full SVD is cheaper and is used instead.

    Returns
    -------
    dec : SpectralDecomposition
    guess : int
        The rank that was sufficient, to seed the next call.
    """
    r_full = min(Z.shape)
    r = max(1, guess)
    while 2 * r < r_full:
        dec = thin_svd(Z, r)
        if dec.sigma[-1] <= threshold:
            return dec, r
        r *= 2
    return thin_svd(Z), r_full


# Factored gradient descent ---------------------------------------------------------

def init_factors(shape: tuple[int, int], k: int, seed: int) -> FactorPair:
    """Random factors with i.i.d. N(0, 1/k) entries."""
    rng = np.random.default_rng(seed)
    sd = np.sqrt(1.0 / k)
    return FactorPair(rng.normal(0, sd, (shape[0], k)), rng.normal(0, sd, (shape[1], k)))


def _factored_rank(W, H, rel_tol=1e-8) -> int:
    s = FactorPair(W, H).core_singular_values()
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rel_tol * s[0]))


def solve_factored(obs: ObservedMatrix, cfg: SolverConfig,
                   validation: ObservedMatrix | None = None, *,
                   laplacian: np.ndarray | None = None,
                   evaluator: Evaluator | None = None,
                   init: FactorPair | None = None):
    """Gradient descent on the factored objective (no SVD of any m x n matrix).

    ``cfg.regularizer.kind`` selects factored NNFN or the factored nuclear
    norm (the same objective without the ``- lam ||W H^T||_F`` term). Both
    gradients are evaluated at the current pair before either factor is
    updated.

    Returns
    -------
    fp : FactorPair
        Final iterate (the last finite one on numerical failure).
    trace : SolveTrace
    """
    spec = cfg.regularizer
    if spec.kind not in (RegularizerKind.NNFN, RegularizerKind.NUCLEAR):
        raise ValueError("factored solver supports nnfn and nuclear only")
    if obs.nnz == 0:
        raise ValueError("no observed entries")
    nnfn = spec.kind is RegularizerKind.NNFN
    lam, eta = spec.lam, cfg.stepsize
    lap_w = cfg.laplacian_weight if laplacian is not None else 0.0
    if lap_w > 0:
        laplacian = _check_laplacian(laplacian, lap_w)
    evaluator = evaluator or _default_evaluator(validation)

    fp = init if init is not None else init_factors(obs.shape, cfg.rank_k, cfg.seed)
    if fp.shape != obs.shape:
        raise ValueError("initial factors do not match the observed shape")
    W, H = fp.W.copy(), fp.H.copy()
    S = obs.to_csr(np.zeros(obs.nnz))
    ws = GatherWorkspace()

    def evaluate(W, H):
        pair = FactorPair(W, H)
        res = pair.entries(obs.row, obs.col, ws) - obs.value
        val = factored_objective(pair, obs, lam, nnfn, residual=res)
        if lap_w > 0:
            val += laplacian_term(pair, laplacian, lap_w)[0]
        return val, res

    trace = SolveTrace()
    clock = _Clock()
    prev, res = evaluate(W, H)
    last_rank = [0]

    def rank_of(refresh=True):
        if refresh:
            last_rank[0] = _factored_rank(W, H)
        return last_rank[0]

    _record(trace, clock, 0, prev, rank_of, lambda: FactorPair(W, H), evaluator, cfg, force=True)
    status = Status.MAX_ITERS
    increases = 0
    for it in range(1, cfg.max_iters + 1):
        pair = FactorPair(W, H)
        gW, gH = factored_gradients(pair, obs, lam, cfg.zero_guard_eps, nnfn, residual=res, _csr=S)
        if lap_w > 0:
            _, (lW, lH) = laplacian_term(pair, laplacian, lap_w)
            gW += lW
            gH += lH
        W_new, H_new = W - eta * gW, H - eta * gH
        if not (np.all(np.isfinite(W_new)) and np.all(np.isfinite(H_new))):
            status = Status.NUMERICAL_FAILURE
            break
        with np.errstate(over="ignore", invalid="ignore"):
            cur, res_new = evaluate(W_new, H_new)
        if not np.isfinite(cur):
            status = Status.NUMERICAL_FAILURE
            break
        W, H, res = W_new, H_new, res_new
        increases = increases + 1 if cur > prev else 0
        done = _relative_change(prev, cur) < cfg.rel_tol
        refresh = done or it % cfg.eval_every == 0
        _record(trace, clock, it, cur, lambda: rank_of(refresh), lambda: FactorPair(W, H),
                evaluator, cfg, force=done)
        prev = cur
        if increases >= cfg.divergence_patience:
            status = Status.NUMERICAL_FAILURE
            break
        if done:
            status = Status.CONVERGED
            break
    trace.status = status
    return FactorPair(W, H), trace
