"""Band-averaged image quality metrics: PSNR, SSIM and relative error."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass
class MetricReport:
    psnr_mean: float = float("nan")
    ssim_mean: float = float("nan")
    re: float = float("nan")
    # (band, psnr, ssim) per frontal slice
    per_band: list = field(default_factory=list)


def _pair(x, t):
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x.shape != t.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {t.shape}")
    if x.ndim == 2:
        x, t = x[:, :, None], t[:, :, None]
    if x.ndim != 3:
        raise ValueError(f"expected 3-way tensors, got shape {x.shape}")
    return x, t


def psnr_bands(x, t, peak: float = 1.0) -> np.ndarray:
    """PSNR of each frontal slice in dB; identical slices give ``inf``."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    x, t = _pair(x, t)
    mse = np.mean((x - t) ** 2, axis=(0, 1))
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(peak**2 / mse)


def psnr_mean(x, t, peak: float = 1.0) -> float:
    return float(np.mean(psnr_bands(x, t, peak)))


def _ssim_slice(a: np.ndarray, b: np.ndarray, peak: float) -> float:
    c1 = (SSIM_K1 * peak) ** 2
    c2 = (SSIM_K2 * peak) ** 2
    # truncate so the kernel is exactly SSIM_WIN wide
    kw = dict(sigma=SSIM_SIGMA, truncate=((SSIM_WIN - 1) / 2) / SSIM_SIGMA, mode="reflect")
    mu_a = gaussian_filter(a, **kw)
    mu_b = gaussian_filter(b, **kw)
    s_aa = gaussian_filter(a * a, **kw) - mu_a**2
    s_bb = gaussian_filter(b * b, **kw) - mu_b**2
    s_ab = gaussian_filter(a * b, **kw) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (s_aa + s_bb + c2)
    pad = (SSIM_WIN - 1) // 2
    return float(np.mean((num / den)[pad:-pad, pad:-pad]))


def ssim_bands(x, t, peak: float = 1.0) -> np.ndarray:
    """Mean SSIM of each frontal slice (11x11 Gaussian window, sigma 1.5).

    Window statistics are computed everywhere with reflected borders and
    averaged over positions whose window lies fully inside the slice.
    """
    if peak <= 0:
        raise ValueError("peak must be positive")
    x, t = _pair(x, t)
    if min(x.shape[:2]) < SSIM_WIN:
        raise ValueError(f"slices of {x.shape[:2]} are smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    return np.array([_ssim_slice(x[:, :, k], t[:, :, k], peak) for k in range(x.shape[2])])


def ssim_mean(x, t, peak: float = 1.0) -> float:
    return float(np.mean(ssim_bands(x, t, peak)))


def relative_error(x, t) -> float:
    """``||x - t||_F / ||t||_F``."""
    x, t = _pair(x, t)
    nt = np.linalg.norm(t)
    if nt == 0:
        raise ValueError("reference tensor is identically zero")
    return float(np.linalg.norm(x - t) / nt)


def evaluate(x, t, peak: float = 1.0, with_ssim: bool = True) -> MetricReport:
    """Full report: per-band PSNR/SSIM, their means, and RE."""
    p = psnr_bands(x, t, peak)
    s = ssim_bands(x, t, peak) if with_ssim else np.full(p.shape, np.nan)
    return MetricReport(
        psnr_mean=float(np.mean(p)),
        ssim_mean=float(np.mean(s)),
        re=relative_error(x, t),
        per_band=[(k, float(p[k]), float(s[k])) for k in range(p.size)],
    )
