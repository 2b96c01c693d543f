"""Shrinkage operators and the low-rank penalties they are proximal to."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import IMAG_TOL, _half_slices, _mirror, fft_mode3, ifft_mode3, unfold


@dataclass(frozen=True)
class SnnWeights:
    """Per-mode weights of the sum of nuclear norms, normalized to sum to one."""

    alpha: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (3,):
            raise ValueError(f"need 3 mode weights, got {self.alpha!r}")
        if np.any(a < 0) or not np.all(np.isfinite(a)) or a.sum() <= 0:
            raise ValueError(f"mode weights must be nonnegative with positive sum: {self.alpha!r}")
        object.__setattr__(self, "alpha", tuple(float(v) for v in a / a.sum()))


def soft_threshold(x, theta: float):
    """Elementwise ``sign(x) * max(|x| - theta, 0)``."""
    if theta < 0:
        raise ValueError("theta must be nonnegative")
    x = np.asarray(x)
    return np.sign(x) * np.maximum(np.abs(x) - theta, 0.0)


def svt_matrix(m: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding, the prox of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    m = np.asarray(m)
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(s))
    if r == 0:
        return np.zeros_like(m)
    return (u[:, :r] * s[:r]) @ vt[:r, :]


def svt_fourier_slices(x: np.ndarray, tau: float) -> np.ndarray:
    """Apply :func:`svt_matrix` to every mode-3 Fourier slice of ``x``.

    Half of the slices are thresholded and the rest mirrored by conjugate
    symmetry, so the inverse transform is real for real ``x``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    n3 = x.shape[2]
    xh = fft_mode3(x)
    out = np.empty_like(xh)
    for k in range(_half_slices(n3)):
        slab = xh[:, :, k]
        if 2 * k % n3 == 0:
            slab = slab.real
        out[:, :, k] = svt_matrix(slab, tau)
    _mirror(out)
    return ifft_mode3(out, tol=IMAG_TOL)


def nuclear_norm(m: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def snn_value(x: np.ndarray, w: SnnWeights | None = None) -> float:
    """Weighted sum of the nuclear norms of the three mode unfoldings."""
    w = w or SnnWeights()
    return float(sum(a * nuclear_norm(unfold(x, k + 1)) for k, a in enumerate(w.alpha)))


def tnn_value(x: np.ndarray) -> float:
    """Sum of nuclear norms of the mode-3 Fourier slices (no 1/n3 factor)."""
    xh = fft_mode3(np.asarray(x, dtype=np.float64))
    return float(sum(nuclear_norm(xh[:, :, k]) for k in range(xh.shape[2])))
