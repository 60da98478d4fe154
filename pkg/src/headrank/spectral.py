"""Spectral diagnostics: normalized spectra, singular entropy, W-error curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# relative slack when deciding whether a truncated spectrum still carries
# the whole Frobenius mass
_MASS_RTOL = 1e-9


def _spectrum(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty spectrum")
    if not np.isfinite(s).all():
        raise ValueError("spectrum has non-finite values")
    if np.any(s < 0):
        raise ValueError("singular values must be non-negative")
    return s


def singular_entropy(sigma) -> float:
    """KL divergence (nats) from the normalized spectrum to uniform.

    ``p_i = sigma_i / sum(sigma)``; the result is ``log(n) - H(p)`` with
    ``0 log 0 = 0``. Zero singular values stay in the support, so ``n`` is
    the number of values passed in.
    """
    s = _spectrum(sigma)
    total = math.fsum(s)
    if total <= 0.0:
        raise ValueError("all-zero spectrum: singular entropy is undefined")
    p = s / total
    nz = p[p > 0]
    return float(max(math.fsum(nz * np.log(nz)) + math.log(s.size), 0.0))


def spectrum_normalize(sigma) -> np.ndarray:
    s = _spectrum(sigma)
    if s[0] <= 0.0:
        raise ValueError("leading singular value is zero; cannot normalize")
    return s / s[0]


def tail_norms(sigma) -> np.ndarray:
    """``sqrt(sum_{i>d} sigma_i^2)`` for d = 0..len(sigma)."""
    s = _spectrum(sigma)
    # accumulate from the small end
    tail = np.concatenate([np.cumsum((s * s)[::-1])[::-1], [0.0]])
    return np.sqrt(tail)


@dataclass
class WErrorCurve:
    d: np.ndarray
    w_error: np.ndarray
    is_lower_bound: np.ndarray

    def rows(self):
        return zip(self.d.tolist(), self.w_error.tolist(), self.is_lower_bound.tolist())


def w_error_curve(sigma, fro_norm, full_rank=None) -> WErrorCurve:
    """Relative error of the best rank-d approximation, for d = 0..len(sigma).

    ``fro_norm`` is the exact Frobenius norm of the matrix. When the
    spectrum was truncated (``full_rank`` larger than ``len(sigma)``) and
    the retained values miss part of ``fro_norm**2``, the unseen tail makes
    every value a lower bound; those points are flagged.
    """
    s = _spectrum(sigma)
    if not fro_norm > 0:
        raise ValueError(f"Frobenius norm must be positive, got {fro_norm}")
    tails = tail_norms(s)
    if tails[0] > fro_norm * (1 + 1e-6):
        raise ValueError(
            f"spectrum mass {tails[0]:.17g} exceeds the Frobenius norm {fro_norm:.17g}"
        )
    werr = np.minimum(tails / fro_norm, 1.0)
    truncated = full_rank is not None and full_rank > s.size
    missing = fro_norm**2 - tails[0] ** 2 > _MASS_RTOL * fro_norm**2
    flags = np.full(s.size + 1, bool(truncated and missing))
    return WErrorCurve(np.arange(s.size + 1), werr, flags)


@dataclass
class SpectralSummary:
    sigma: np.ndarray
    fro_norm: float
    singular_entropy: float
    w_error: WErrorCurve
    full_rank: int
    truncated: bool = False

    def to_json(self) -> dict:
        return {
            "n_singular_values": int(self.sigma.size),
            "full_rank": int(self.full_rank),
            "truncated": bool(self.truncated),
            "fro_norm": float(self.fro_norm),
            "singular_entropy": float(self.singular_entropy),
            "sigma_max": float(self.sigma[0]) if self.sigma.size else 0.0,
        }


def summarize(sigma, fro_norm, full_rank=None) -> SpectralSummary:
    s = _spectrum(sigma)
    full_rank = s.size if full_rank is None else full_rank
    return SpectralSummary(
        sigma=s,
        fro_norm=float(fro_norm),
        singular_entropy=singular_entropy(s),
        w_error=w_error_curve(s, fro_norm, full_rank),
        full_rank=full_rank,
        truncated=full_rank > s.size,
    )
