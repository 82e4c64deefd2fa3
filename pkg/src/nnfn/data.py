"""Synthetic instances, triplet ingestion, observation splits and graph Laplacians.

All randomness goes through :func:`numpy.random.default_rng` (PCG64) seeded by
the caller, so every output is a pure function of its inputs and the seed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .linalg import ObservedMatrix


@dataclass(frozen=True)
class SyntheticInstance:
    ground_truth: np.ndarray
    train: ObservedMatrix
    validation: ObservedMatrix
    true_rank: int
    noise_std: float
    seed: int

    @property
    def observed_mask(self) -> np.ndarray:
        return self.train.mask() | self.validation.mask()

    @property
    def test_mask(self) -> np.ndarray:
        """Positions never observed (neither train nor validation)."""
        return ~self.observed_mask


def observed_count(m: int, k_star: int, sparsity_multiplier: float = 1.0) -> int:
    """``round(multiplier * 2 * m * k* * ln m)`` observed positions."""
    return int(round(sparsity_multiplier * 2 * m * k_star * math.log(m)))


def generate_synthetic(m: int, k_star: int, noise_std: float,
                       sparsity_multiplier: float = 1.0, seed: int = 0) -> SyntheticInstance:
    """Square rank-``k_star`` instance ``G = W H^T`` with Gaussian noise.

    ``W`` and ``H`` have standard-normal entries. Observed positions are drawn
    uniformly without replacement and split evenly into train and validation.
    ``noise_std`` is the standard deviation of the additive noise; pass
    ``sqrt(variance)`` when working from a noise variance.
    """
    if not (m >= k_star >= 1):
        raise ValueError("need m >= k_star >= 1")
    if noise_std < 0 or sparsity_multiplier <= 0:
        raise ValueError("noise_std must be >= 0 and sparsity_multiplier > 0")
    nnz = observed_count(m, k_star, sparsity_multiplier)
    if nnz > m * m:
        raise ValueError(f"requested {nnz} observations exceeds m^2 = {m * m}")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((m, k_star))
    H = rng.standard_normal((m, k_star))
    G = W @ H.T
    flat = rng.choice(m * m, size=nnz, replace=False)
    r, c = np.divmod(flat, m)
    vals = G[r, c] + noise_std * rng.standard_normal(nnz)
    perm = rng.permutation(nnz)
    half = nnz // 2
    tr, va = perm[:half], perm[half:]
    return SyntheticInstance(
        ground_truth=G,
        train=ObservedMatrix((m, m), r[tr], c[tr], vals[tr]),
        validation=ObservedMatrix((m, m), r[va], c[va], vals[va]),
        true_rank=k_star,
        noise_std=float(noise_std),
        seed=seed,
    )


_SEP = re.compile(r"[,\t ]+")


def load_triplets(path, rows: int, cols: int, one_based: bool = False) -> ObservedMatrix:
    """Read ``row<sep>col<sep>value`` lines into an ObservedMatrix.

    Separators may be commas, tabs or spaces. A non-numeric first line is
    treated as a header. Blank lines and ``#`` comments are ignored.

    Raises
    ------
    ValueError
        On parse errors, out-of-range indices or duplicate positions, with
        the offending 1-based line number in the message.
    """
    path = Path(path)
    r_list, c_list, v_list = [], [], []
    header_seen = False
    seen: dict[tuple[int, int], int] = {}
    offset = 1 if one_based else 0
    with path.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p for p in _SEP.split(line) if p]
            try:
                if len(parts) < 3:
                    raise ValueError("expected 3 fields")
                i, j = int(parts[0]) - offset, int(parts[1]) - offset
                v = float(parts[2])
            except ValueError as exc:
                if not r_list and not header_seen and not _looks_numeric(parts):
                    header_seen = True
                    continue
                raise ValueError(f"{path}:{lineno}: cannot parse {line!r} ({exc})") from None
            if not (0 <= i < rows and 0 <= j < cols):
                raise ValueError(f"{path}:{lineno}: index ({parts[0]}, {parts[1]}) out of range "
                                 f"for shape ({rows}, {cols})")
            if not math.isfinite(v):
                raise ValueError(f"{path}:{lineno}: non-finite value")
            if (i, j) in seen:
                raise ValueError(f"{path}:{lineno}: duplicate entry ({parts[0]}, {parts[1]}); "
                                 f"first seen at line {seen[(i, j)]}")
            seen[(i, j)] = lineno
            r_list.append(i)
            c_list.append(j)
            v_list.append(v)
    return ObservedMatrix((rows, cols), np.array(r_list, dtype=np.int64),
                          np.array(c_list, dtype=np.int64), np.array(v_list, dtype=float))


def _looks_numeric(parts) -> bool:
    for p in parts:
        try:
            float(p)
        except ValueError:
            return False
    return True


def save_triplets(obs: ObservedMatrix, path, one_based: bool = False) -> None:
    off = 1 if one_based else 0
    with Path(path).open("w") as fh:
        for i, j, v in zip(obs.row, obs.col, obs.value):
            fh.write(f"{int(i) + off},{int(j) + off},{float(v)!r}\n")


def _largest_remainder(n: int, fractions) -> list[int]:
    raw = [f * n for f in fractions]
    sizes = [int(math.floor(x)) for x in raw]
    rem = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:rem]:
        sizes[i] += 1
    return sizes


def split_observations(obs: ObservedMatrix, fractions=(0.5, 0.25, 0.25), seed: int = 0):
    """Random disjoint train/validation/test partition of the observed entries."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be three nonnegative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    if obs.nnz == 0:
        raise ValueError("cannot split an empty observation set")
    sizes = _largest_remainder(obs.nnz, fractions)
    perm = np.random.default_rng(seed).permutation(obs.nnz)
    bounds = np.cumsum([0] + sizes)
    return tuple(obs.subset(perm[bounds[i]:bounds[i + 1]]) for i in range(3))


def build_laplacian(affinity: np.ndarray) -> np.ndarray:
    """``L = D - A`` with ``D = diag(row sums of A)``."""
    A = np.asarray(affinity, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("affinity must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("affinity must be finite")
    if np.max(np.abs(A - A.T), initial=0.0) > 1e-10:
        raise ValueError("affinity must be symmetric")
    if np.any(A < 0):
        raise ValueError("affinity must be nonnegative")
    A = 0.5 * (A + A.T)
    return np.diag(A.sum(axis=1)) - A


def load_affinity(path) -> np.ndarray:
    """Dense comma-separated affinity matrix, one row per line."""
    A = np.loadtxt(path, delimiter=",", ndmin=2)
    return A
