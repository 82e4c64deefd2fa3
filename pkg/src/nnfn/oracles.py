"""Brute-force reference minimizers and the randomized prox check suites.

Nothing here calls the closed forms in :mod:`nnfn.regularizers` on the
reference path; the oracles work from the objective alone (grid search,
bounded local descent, and a Newton/KKT polish on the detected support).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .regularizers import (
    RegularizerKind,
    RegularizerSpec,
    prox_l12,
    prox_nnfn,
    prox_scalar,
    prox_spectrum,
    scalar_penalty,
)

_GRID_PER_DIM = {1: 4001, 2: 201, 3: 41, 4: 17, 5: 11}


def l12_objective(x, z, lam):
    x = np.asarray(x, dtype=float)
    return 0.5 * np.sum((x - z) ** 2, axis=-1) + lam * (
        np.sum(np.abs(x), axis=-1) - np.linalg.norm(x, axis=-1))


def _polish_support(a, lam, x, max_rounds=10):
    """Newton on the stationarity equations of the support, then KKT checks.

    On the support S the objective is smooth, with gradient
    ``x - a + lam - lam * x / ||x||``; off the support a zero coordinate is
    optimal iff ``a_j <= lam``.
    """
    x = x.copy()
    for _ in range(max_rounds):
        S = x > 0
        if not S.any():
            return x
        xs = x[S]
        for _ in range(50):
            rho = np.linalg.norm(xs)
            g = xs - a[S] + lam - lam * xs / rho
            u = xs / rho
            J = np.eye(xs.size) - (lam / rho) * (np.eye(xs.size) - np.outer(u, u))
            step = np.linalg.lstsq(J, g, rcond=None)[0]
            xs = xs - step
            if np.max(np.abs(step)) < 1e-15 * max(1.0, np.max(np.abs(xs))):
                break
        x = np.zeros_like(x)
        x[S] = xs
        changed = False
        if np.any(xs <= 0):
            x[x < 0] = 0.0
            changed = True
        off = ~S
        if np.any(a[off] > lam * (1 + 1e-12)):
            j = np.flatnonzero(off)[np.argmax(a[off])]
            x[j] = a[j] - lam if a[j] > lam else 1e-8
            changed = True
        if not changed:
            return x
    return x


def brute_force_prox_l12(z, lam, n_starts: int = 4) -> np.ndarray:
    """Global minimizer of ``0.5||x - z||^2 + lam(||x||_1 - ||x||_2)``.

    The search is restricted to the closed orthant of ``sign(z)``: flipping
    any coordinate towards that orthant lowers the quadratic term and leaves
    the penalty unchanged.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    sgn = np.where(z < 0, -1.0, 1.0)
    a = np.abs(z)
    hi = a.max() + lam + 1e-12
    g = np.linspace(0.0, hi, _GRID_PER_DIM.get(n, 9))
    pts = np.stack(np.meshgrid(*([g] * n), indexing="ij"), axis=-1).reshape(-1, n)
    vals = l12_objective(pts, a, lam)
    k = min(n_starts, vals.size)
    top = np.argpartition(vals, k - 1)[:k]
    starts = pts[top[np.argsort(vals[top], kind="stable")]]

    def fun(x):
        nx = np.linalg.norm(x)
        f = 0.5 * np.sum((x - a) ** 2) + lam * (x.sum() - nx)
        grad = x - a + lam - (lam * x / nx if nx > 0 else 0.0)
        return f, grad

    best, best_val = np.zeros(n), l12_objective(np.zeros(n), a, lam)
    for x0 in starts:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       bounds=[(0, None)] * n,
                       options={"ftol": 1e-15, "gtol": 1e-13, "maxiter": 2000})
        x = _polish_support(a, lam, np.maximum(res.x, 0.0))
        x[x < 1e-10] = 0.0
        v = l12_objective(x, a, lam)
        if v < best_val - 1e-14:
            best, best_val = x, v
    return sgn * best


def brute_force_prox_scalar(spec: RegularizerSpec, z: float, n_grid: int = 20001) -> float:
    """Scalar minimizer by a dense grid plus bounded refinement of each basin."""
    lo, hi = -1.0, 2.0 * z + 1.0
    g = np.linspace(lo, hi, n_grid)
    h = g[1] - g[0]
    phi = lambda x: 0.5 * (x - z) ** 2 + spec.lam * scalar_penalty(spec, x)  # noqa: E731
    v = phi(g)
    # Local minima of the sampled sequence (including endpoints).
    left = np.r_[np.inf, v[:-1]]
    right = np.r_[v[1:], np.inf]
    idx = np.flatnonzero((v <= left) & (v <= right))
    idx = idx[np.argsort(v[idx], kind="stable")[:4]]
    best_x, best_v = None, np.inf
    for i in idx:
        a, b = max(lo, g[i] - h), min(hi, g[i] + h)
        res = minimize_scalar(lambda t: float(phi(t)), bounds=(a, b),
                              method="bounded", options={"xatol": 1e-13})
        for x in (res.x, g[i], a, b, 0.0):
            fx = float(phi(x))
            if fx < best_v - 1e-15 or (abs(fx - best_v) <= 1e-15 and x < best_x):
                best_x, best_v = x, fx
    return float(best_x)


def nnfn_matrix_objective(X, Z, lam):
    s = np.linalg.svd(X, compute_uv=False)
    return 0.5 * np.sum((X - Z) ** 2) + lam * (s.sum() - np.linalg.norm(s))


def probe_local_optimality(Z, lam, rng, n_probe: int = 200) -> tuple[bool, float]:
    """Compare the prox objective at ``prox_nnfn(Z)`` against nearby points.

    Returns ``(ok, worst_margin)`` where a negative margin means a probe
    point beat the prox output.
    """
    Xh = prox_nnfn(Z, lam)
    f0 = nnfn_matrix_objective(Xh, Z, lam)
    scale = max(np.linalg.norm(Z), 1.0)
    worst = np.inf
    probes = [Z, np.zeros_like(Z)]
    for i in range(n_probe):
        eps = scale * 10.0 ** rng.uniform(-6, -1)
        probes.append(Xh + eps * rng.standard_normal(Z.shape) / np.sqrt(Z.size))
    tol = 1e-10 * max(1.0, abs(f0))
    for P in probes:
        worst = min(worst, nnfn_matrix_objective(P, Z, lam) - f0)
    return bool(worst >= -tol), float(worst)


# Randomized suites --------------------------------------------------------

@dataclass
class SuiteResult:
    name: str
    passed: bool
    n_cases: int
    n_failed: int
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: {self.n_cases - self.n_failed}/{self.n_cases} {self.detail}".rstrip()


def random_spectrum(rng, n=None, sorted_desc=True):
    n = int(rng.integers(1, 6)) if n is None else n
    s = rng.uniform(0, 10, n) * (rng.random(n) < 0.9)
    return np.sort(s)[::-1] if sorted_desc else s


def check_prox_l12(rng, n_cases=1000, tol=1e-6) -> SuiteResult:
    failed, worst = 0, 0.0
    for _ in range(n_cases):
        n = int(rng.integers(1, 6))
        z = rng.normal(0, 3, n)
        lam = rng.uniform(0.01, 2 * max(np.abs(z).max(), 1e-3))
        x = prox_l12(z, lam)
        ref = brute_force_prox_l12(z, lam)
        err = float(np.max(np.abs(x - ref)))
        failed += err > tol
        worst = max(worst, err)
    return SuiteResult("prox_l12 vs brute force", failed == 0, n_cases, failed,
                       f"(max coord err {worst:.2e}, tol {tol:g})")


def check_prox_scalar(rng, kind: RegularizerKind, n_cases=1000, tol=1e-6) -> SuiteResult:
    failed, worst = 0, 0.0
    for _ in range(n_cases):
        lam = float(rng.uniform(0.01, 3))
        theta = float(rng.uniform(0.2, 5))
        spec = RegularizerSpec(kind, lam, theta)
        z = float(rng.uniform(0, 10))
        x = prox_scalar(spec, z)
        ref = brute_force_prox_scalar(spec, z)
        err = abs(x - ref)
        failed += err > tol
        worst = max(worst, err)
    return SuiteResult(f"prox_scalar[{kind.value}] vs brute force", failed == 0, n_cases,
                       failed, f"(max err {worst:.2e}, tol {tol:g})")


def check_prox_nnfn_probe(rng, n_cases=100) -> SuiteResult:
    failed, worst = 0, np.inf
    for _ in range(n_cases):
        m, n = int(rng.integers(2, 7)), int(rng.integers(2, 7))
        Z = rng.standard_normal((m, n)) * rng.uniform(0.5, 5)
        s1 = np.linalg.norm(Z, 2)
        lam = float(rng.uniform(0.01, 1.5) * s1)
        ok, margin = probe_local_optimality(Z, lam, rng)
        failed += not ok
        worst = min(worst, margin)
    return SuiteResult("prox_nnfn local-optimality probe", failed == 0, n_cases, failed,
                       f"(min margin {worst:.2e})")


def shrinkage_violations(sigma, out, tol=1e-10):
    """Indices where the output exceeds the input."""
    return np.flatnonzero(out > sigma + tol)


def adaptivity_pairs(sigma, out):
    """Consecutive index pairs whose prox outputs are both nonzero."""
    return [i for i in range(len(sigma) - 1) if out[i] > 0 and out[i + 1] > 0]


def check_adaptive_shrinkage(rng, kind: RegularizerKind, n_cases=1000,
                             scope: str = "all") -> SuiteResult:
    """Shrinkage and adaptivity on random sorted spectra.

    With ``scope="all"`` adaptivity ``d_i <= d_{i+1}`` (``d = sigma - out``)
    is required for every consecutive pair, plus strict inequality for at
    least one pair whenever the inputs are not all equal and some output is
    nonzero. With ``scope="support"`` only pairs whose outputs are both
    nonzero are checked, and strictness is required on every such pair with
    distinct inputs for NNFN and LSP.
    """
    if scope not in ("all", "support"):
        raise ValueError("scope must be 'all' or 'support'")
    failed = 0
    tol = 1e-9
    strict_kinds = (RegularizerKind.NNFN, RegularizerKind.LSP)
    example = None
    for _ in range(n_cases):
        s = random_spectrum(rng, n=int(rng.integers(2, 8)))
        lam = float(rng.uniform(0.05, 0.8) * max(s.max(), 1e-3))
        theta = float(rng.uniform(0.2, 5)) if kind.needs_theta else None
        spec = RegularizerSpec(kind, lam, theta)
        out = prox_spectrum(spec, s)
        bad = len(shrinkage_violations(s, out)) > 0 or np.any(out < 0)
        bad |= bool(np.any(np.diff(out) > tol))
        d = s - out
        if scope == "all":
            bad |= bool(np.any(d[:-1] > d[1:] + tol))
            if np.ptp(s) > 1e-6 and np.any(out > 0):
                bad |= not bool(np.any(d[:-1] < d[1:] - tol))
        else:
            for i in adaptivity_pairs(s, out):
                if d[i] > d[i + 1] + tol:
                    bad = True
                if kind in strict_kinds and s[i] > s[i + 1] + 1e-6 and not d[i] < d[i + 1]:
                    bad = True
        if bad and example is None:
            example = f"e.g. sigma={np.round(s, 3).tolist()} lam={lam:.3g} theta={theta} -> {np.round(out, 3).tolist()}"
        failed += bool(bad)
    name = f"adaptive shrinkage[{kind.value}]" + ("" if scope == "all" else " on support")
    return SuiteResult(name, failed == 0, n_cases, failed, example or "")


def check_uniform_nuclear(rng, n_cases=1000) -> SuiteResult:
    failed = 0
    for _ in range(n_cases):
        s = random_spectrum(rng, n=int(rng.integers(1, 8)))
        lam = float(rng.uniform(0, 1.2) * max(s.max(), 1e-3))
        out = prox_spectrum(RegularizerSpec(RegularizerKind.NUCLEAR, lam), s)
        failed += not np.allclose(s - out, np.minimum(lam, s), atol=1e-12)
    return SuiteResult("uniform shrinkage[nuclear]", failed == 0, n_cases, failed)


def run_all(seed: int = 0, progress: Callable[[SuiteResult], None] | None = None) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    jobs = [
        lambda: check_prox_l12(rng),
        lambda: check_prox_scalar(rng, RegularizerKind.CAPPED_L1),
        lambda: check_prox_scalar(rng, RegularizerKind.LSP),
        lambda: check_prox_scalar(rng, RegularizerKind.MCP),
        lambda: check_prox_nnfn_probe(rng),
        *[(lambda k=k, sc=sc: check_adaptive_shrinkage(rng, k, scope=sc))
          for sc in ("all", "support")
          for k in (RegularizerKind.NNFN, RegularizerKind.CAPPED_L1,
                    RegularizerKind.LSP, RegularizerKind.MCP)],
        lambda: check_uniform_nuclear(rng),
    ]
    results = []
    for job in jobs:
        r = job()
        results.append(r)
        if progress:
            progress(r)
    return results
