"""Spectral regularizers and their proximal operators.

Every regularizer here acts on a matrix only through its singular values,
so each matrix prox is "decompose, map the spectrum, reassemble".
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .linalg import thin_svd

ZERO_SNAP = 1e-12


class RegularizerKind(str, enum.Enum):
    NUCLEAR = "nuclear"
    NNFN = "nnfn"
    CAPPED_L1 = "capped-l1"
    LSP = "lsp"
    MCP = "mcp"

    @property
    def needs_theta(self) -> bool:
        return self in (RegularizerKind.CAPPED_L1, RegularizerKind.LSP, RegularizerKind.MCP)


@dataclass(frozen=True)
class RegularizerSpec:
    kind: RegularizerKind
    lam: float
    theta: float | None = None

    def __post_init__(self):
        kind = RegularizerKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be finite and >= 0, got {self.lam}")
        if kind.needs_theta:
            if self.theta is None or not self.theta > 0:
                raise ValueError(f"{kind.value} requires theta > 0")
        elif self.theta is not None:
            raise ValueError(f"theta is not used by {kind.value}; leave it unset")

    def with_lambda(self, lam: float) -> "RegularizerSpec":
        return replace(self, lam=lam)

    def scaled(self, eta: float) -> "RegularizerSpec":
        """Spec whose prox is the prox of ``eta * lam * r``.

        MCP's penalty depends on lambda itself, so scaling it also rescales
        theta to keep the penalty curve ``eta * (lam * r_hat)`` exact.
        """
        if self.kind is RegularizerKind.MCP:
            return replace(self, lam=eta * self.lam, theta=self.theta / eta)
        return replace(self, lam=eta * self.lam)


def _check_sigma(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=float).ravel()
    if not np.all(np.isfinite(s)):
        raise ValueError("singular values must be finite")
    if np.any(s < 0):
        raise ValueError("singular values must be nonnegative")
    return s


def scalar_penalty(spec: RegularizerSpec, x):
    """``r_hat(x)`` for the separable kinds, elementwise on x >= 0."""
    x = np.abs(np.asarray(x, dtype=float))
    th, lam = spec.theta, spec.lam
    if spec.kind is RegularizerKind.CAPPED_L1:
        return np.minimum(x, th)
    if spec.kind is RegularizerKind.LSP:
        return np.log1p(x / th)
    if spec.kind is RegularizerKind.MCP:
        if lam == 0:
            return np.zeros_like(x)
        t = th * lam
        return np.where(x <= t, x - x * x / (2 * t), t / 2)
    raise ValueError(f"{spec.kind.value} is not a separable penalty")


def regularizer_value(spec: RegularizerSpec, sigma) -> float:
    """Regularizer value from singular values, without the lambda factor."""
    s = _check_sigma(sigma)
    if spec.kind is RegularizerKind.NUCLEAR:
        return float(s.sum())
    if spec.kind is RegularizerKind.NNFN:
        top = float(s.max(initial=0.0))
        if top == 0.0:
            return 0.0
        # Scale first so tiny spectra do not underflow; clamp rounding noise.
        t = s / top
        return max(top * float(t.sum() - np.linalg.norm(t)), 0.0)
    return float(np.sum(scalar_penalty(spec, s)))


def _snap(x: np.ndarray) -> np.ndarray:
    x[np.abs(x) < ZERO_SNAP] = 0.0
    return x


def soft_threshold(z, lam: float) -> np.ndarray:
    """``max(z - lam, 0)``, the nuclear-norm map on singular values."""
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("input must be finite")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return _snap(np.maximum(z - lam, 0.0))


def prox_l12(z, lam: float) -> np.ndarray:
    """Proximal operator of ``lam * (||x||_1 - ||x||_2)``.

    Closed form (Lou & Yan, 2018) with unit weight on the l2 term:

    * ``max|z| > lam``: soft-threshold ``z`` by ``lam`` to get ``u`` and
      return ``u * (||u|| + lam) / ||u||``;
    * ``0 < max|z| <= lam``: a 1-sparse vector keeping the first
      largest-magnitude entry of ``z`` unchanged;
    * ``z == 0``: zero.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValueError("input must be finite")
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    out = np.zeros_like(z)
    if z.size == 0:
        return out
    a = np.abs(z)
    amax = a.max()
    if amax == 0:
        return out
    if lam == 0:
        return _snap(z.copy())
    if amax > lam:
        u = np.maximum(a - lam, 0.0) * np.sign(z)
        nu = np.linalg.norm(u)
        out = u * ((nu + lam) / nu)
    else:
        i = int(np.argmax(a))
        out.flat[i] = z.flat[i]
    return _snap(out)


def _phi(spec: RegularizerSpec, x, z):
    x = np.asarray(x, dtype=float)
    return 0.5 * (x - z) ** 2 + spec.lam * scalar_penalty(spec, x)


def _scalar_candidates(spec: RegularizerSpec, z: float) -> list[float]:
    lam, th = spec.lam, spec.theta
    cands = [0.0, z]
    if spec.kind is RegularizerKind.CAPPED_L1:
        cands += [min(max(z - lam, 0.0), th), max(z, th)]
    elif spec.kind is RegularizerKind.LSP:
        # Stationary points of 0.5(x-z)^2 + lam*log(1 + x/theta) on x >= 0.
        disc = (z + th) ** 2 - 4 * lam
        if disc >= 0:
            r = math.sqrt(disc)
            cands += [x for x in ((z - th + r) / 2, (z - th - r) / 2) if x > 0]
    elif spec.kind is RegularizerKind.MCP:
        t = th * lam
        cands += [t, max(z, t)]
        curv = 1.0 - 1.0 / th
        if curv > 0:
            cands.append(min(max((z - lam) / curv, 0.0), t))
    else:
        raise ValueError(f"prox_scalar does not support {spec.kind.value}")
    return cands


def prox_scalar(spec: RegularizerSpec, sigma_i: float) -> float:
    """``argmin_x 0.5 (x - sigma_i)^2 + lam * r_hat(|x|)``.

    The minimizer is taken over an exhaustive candidate list (interval
    endpoints and stationary points of every smooth piece). Ties go to the
    smaller objective, then the smaller x.
    """
    z = float(sigma_i)
    if not math.isfinite(z) or z < 0:
        raise ValueError("sigma_i must be finite and >= 0")
    if not spec.kind.needs_theta:
        raise ValueError(f"prox_scalar does not support {spec.kind.value}")
    if spec.lam == 0:
        return z
    cands = sorted(set(_scalar_candidates(spec, z)))
    vals = [float(_phi(spec, x, z)) for x in cands]
    best = min(range(len(cands)), key=lambda i: (vals[i], cands[i]))
    x = cands[best]
    return 0.0 if abs(x) < ZERO_SNAP else x


def prox_spectrum(spec: RegularizerSpec, sigma) -> np.ndarray:
    """Apply the per-spectrum prox map of ``spec`` to nonnegative ``sigma``."""
    s = _check_sigma(sigma)
    if spec.kind is RegularizerKind.NUCLEAR:
        return soft_threshold(s, spec.lam)
    if spec.kind is RegularizerKind.NNFN:
        return prox_l12(s, spec.lam)
    return np.array([prox_scalar(spec, x) for x in s], dtype=float)


def prox_spectral(spec: RegularizerSpec, Z: np.ndarray, rank: int | None = None) -> np.ndarray:
    """Generalised singular value thresholding of ``Z`` under ``spec``."""
    dec = thin_svd(Z, rank)
    return dec.reconstruct(prox_spectrum(spec, dec.sigma))


def prox_nnfn(Z: np.ndarray, lam: float) -> np.ndarray:
    """Prox of ``lam * (||X||_* - ||X||_F)``."""
    return prox_spectral(RegularizerSpec(RegularizerKind.NNFN, lam), Z)
