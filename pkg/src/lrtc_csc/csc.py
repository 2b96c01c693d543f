"""Convolutional sparse coding denoiser.

All convolutions are circular over the full slice and carried out in the
2-D Fourier domain.  Filters are stored as an ``(r, r, K)`` array (the
dictionary file layout) and are zero padded to the slice size, anchored
at the origin, when a problem is solved.  Feature maps are stored filter
first, as ``(K, n1, n2)`` arrays, so per-map transforms are contiguous.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import io as tio
from .tensor import as_tensor3

logger = logging.getLogger(__name__)

NORM_TOL = 1e-6
RENORM_LIMIT = 1e-3


class DictionaryError(ValueError):
    """Raised for malformed dictionaries or dictionary files."""


@dataclass(frozen=True)
class ConvDictionary:
    """A stack of ``K`` unit-norm ``r x r`` filters, shape ``(r, r, K)``."""

    filters: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.filters, dtype=np.float64)
        if f.ndim == 2:
            f = f[:, :, None]
        if f.ndim != 3 or f.shape[0] != f.shape[1] or min(f.shape) < 1:
            raise DictionaryError(f"filters must have shape (r, r, K), got {f.shape}")
        if not np.all(np.isfinite(f)):
            raise DictionaryError("filters contain non-finite values")
        f = f.copy()
        f.flags.writeable = False
        object.__setattr__(self, "filters", f)

    @property
    def K(self) -> int:
        return self.filters.shape[2]

    @property
    def r(self) -> int:
        return self.filters.shape[0]

    def norms(self) -> np.ndarray:
        return np.sqrt(np.sum(self.filters**2, axis=(0, 1)))

    def spectrum(self, shape) -> np.ndarray:
        """rfft2 of the zero-padded filters, shape ``(K, n1, n2 // 2 + 1)``."""
        n1, n2 = shape
        if self.r > min(n1, n2):
            raise ValueError(f"filter size {self.r} exceeds slice size {tuple(shape)}")
        return sfft.rfft2(np.moveaxis(self.filters, 2, 0), s=(n1, n2))

    @classmethod
    def delta(cls) -> "ConvDictionary":
        """Single 1x1 unit impulse; convolving with it is the identity."""
        return cls(np.ones((1, 1, 1)))

    @classmethod
    def random(cls, K: int, r: int, seed: int = 0) -> "ConvDictionary":
        """Seeded Gaussian filters scaled to unit Frobenius norm."""
        rng = np.random.default_rng(seed)
        f = rng.standard_normal((r, r, K))
        return cls(f / np.sqrt(np.sum(f**2, axis=(0, 1))))


@dataclass(frozen=True)
class CscParams:
    """Parameters of the gradient-regularized CBPDN problem.

    ``rho`` defaults to ``100 * Lambda + 1``.  ``Lambda`` and ``rho`` refer
    to the units of the signal handed to :func:`cbpdn_gr_solve`.
    """

    Lambda: float = 10.0
    rho: float | None = None
    tau_g: float = 0.06
    inner_iters: int = 50
    tol: float = 1e-4

    def __post_init__(self):
        if self.rho is None:
            object.__setattr__(self, "rho", 100.0 * self.Lambda + 1.0)
        if not self.Lambda > 0:
            raise ValueError("Lambda must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.tau_g < 0:
            raise ValueError("tau_g must be nonnegative")
        if self.inner_iters < 1:
            raise ValueError("inner_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be nonnegative")


@dataclass
class FeatureMapStack:
    """Coefficient maps ``(K, n1, n2)`` plus solver diagnostics."""

    maps: np.ndarray
    iterations: int = 0
    # one dict per sweep: objective, lagrangian, primal_residual
    stats: list = field(default_factory=list)
    # scaled multiplier C = Theta / rho at exit, kept for warm starts
    dual: np.ndarray | None = None

    @property
    def shape(self):
        return self.maps.shape[1:]

    @property
    def K(self) -> int:
        return self.maps.shape[0]


# ---------------------------------------------------------------------------
# gradient filters and the low/high-frequency split

def gradient_filters(shape) -> tuple[np.ndarray, np.ndarray]:
    """Circular forward-difference kernels along rows and columns.

    Full-size arrays, each summing to zero;
    ``(g0 * x)[i, j] = x[i, j] - x[i-1, j]`` with wrap-around.
    """
    n1, n2 = shape
    g0 = np.zeros((n1, n2))
    g1 = np.zeros((n1, n2))
    g0[0, 0] = 1.0
    g1[0, 0] = 1.0
    g0[1 % n1, 0] -= 1.0
    g1[0, 1 % n2] -= 1.0
    return g0, g1


def gradient_energy_spectrum(shape) -> np.ndarray:
    """``|g0_hat|^2 + |g1_hat|^2`` on the rfft2 grid of ``shape``."""
    g0, g1 = gradient_filters(shape)
    return np.abs(sfft.rfft2(g0)) ** 2 + np.abs(sfft.rfft2(g1)) ** 2


def lowpass_split(slice_: np.ndarray, lambda_lp: float = 5.0) -> tuple[np.ndarray, np.ndarray]:
    """Split a 2-D slice into smooth and detail parts.

    ``low`` minimizes ``1/2||L - s||^2 + lambda_lp/2 (||g0*L||^2 + ||g1*L||^2)``,
    solved exactly in the Fourier domain; ``high = s - low``.
    """
    if lambda_lp < 0:
        raise ValueError("lambda_lp must be nonnegative")
    s = np.asarray(slice_, dtype=np.float64)
    if lambda_lp == 0:
        return s.copy(), np.zeros_like(s)
    g = gradient_energy_spectrum(s.shape)
    low = sfft.irfft2(sfft.rfft2(s) / (1.0 + lambda_lp * g), s=s.shape)
    return low, s - low


# ---------------------------------------------------------------------------
# CBPDN with gradient regularization

def sherman_morrison_solve(dhat: np.ndarray, a, b: np.ndarray) -> np.ndarray:
    """Solve ``(conj(d) d^T + a I) x = b`` independently at every frequency.

    ``dhat`` and ``b`` carry the filter index first, ``(K, ...)``; ``a`` is
    a positive scalar or field broadcasting against ``dhat[0]``.  With
    ``u = conj(d)`` the system is ``a I + u u^H`` and
    ``x = (b - u (u^H b) / (a + u^H u)) / a``.
    """
    uhb = np.einsum("k...,k...->...", dhat, b)
    uhu = np.einsum("k...,k...->...", dhat, np.conj(dhat)).real
    return (b - np.conj(dhat) * (uhb / (a + uhu))) / a


def cbpdn_system(dhat: np.ndarray, a) -> np.ndarray:
    """Dense per-frequency matrices ``conj(d) d^T + a I``, shape ``(..., K, K)``."""
    d = np.moveaxis(dhat, 0, -1)
    K = d.shape[-1]
    outer = np.conj(d)[..., :, None] * d[..., None, :]
    return outer + np.asarray(a)[..., None, None] * np.eye(K)


class _Solver:
    """Per-shape precomputation for repeated CBPDN solves."""

    def __init__(self, d: ConvDictionary, shape, p: CscParams):
        self.shape = tuple(shape)
        self.p = p
        self.dhat = d.spectrum(self.shape)
        self.cdhat = np.conj(self.dhat)
        a = p.rho + p.tau_g * gradient_energy_spectrum(self.shape)
        uhu = np.sum(np.abs(self.dhat) ** 2, axis=0)
        self.inv_a = 1.0 / a
        self.gain = self.inv_a / (a + uhu)

    def solve(self, s: np.ndarray, init: FeatureMapStack | None, record: bool,
              d: ConvDictionary) -> FeatureMapStack:
        p = self.p
        K = self.dhat.shape[0]
        shat = sfft.rfft2(s)
        dhs = self.cdhat * shat
        if init is not None:
            if init.maps.shape != (K, *self.shape):
                raise ValueError("warm start maps do not match the problem shape")
            B = np.array(init.maps, dtype=np.float64)
            C = np.zeros_like(B) if init.dual is None else np.array(init.dual, dtype=np.float64)
        else:
            B = np.zeros((K, *self.shape))
            C = np.zeros_like(B)
        thresh = p.Lambda / p.rho
        stats = []
        it = 0
        for it in range(1, p.inner_iters + 1):
            rhs = dhs + p.rho * sfft.rfft2(B - C)
            # Sherman-Morrison, factors precomputed per frequency
            uhb = np.einsum("kij,kij->ij", self.dhat, rhs)
            Mhat = rhs * self.inv_a - self.cdhat * (uhb * self.gain)
            M = sfft.irfft2(Mhat, s=self.shape)
            V = M + C
            B = V - np.clip(V, -thresh, thresh)
            diff = M - B
            C = C + diff
            nm = max(np.linalg.norm(M), np.linalg.norm(B))
            res = np.linalg.norm(diff) / nm if nm > 0 else 0.0
            if record:
                smooth = cbpdn_objective(d, M, s, 0.0, p.tau_g)
                lag = (smooth + p.Lambda * np.abs(B).sum()
                       + p.rho * np.sum(C * diff) + 0.5 * p.rho * np.sum(diff**2))
                stats.append({
                    "iter": it,
                    "objective": cbpdn_objective(d, B, s, p.Lambda, p.tau_g),
                    "lagrangian": float(lag),
                    "primal_residual": float(np.linalg.norm(diff)),
                })
            if res < p.tol:
                break
        return FeatureMapStack(B, iterations=it, stats=stats, dual=C)


def reconstruct(d: ConvDictionary, m) -> np.ndarray:
    """``sum_i d_i * M_i`` with circular convolution."""
    maps = m.maps if isinstance(m, FeatureMapStack) else np.asarray(m, dtype=np.float64)
    if maps.ndim != 3 or maps.shape[0] != d.K:
        raise ValueError(f"maps of shape {maps.shape} do not match {d.K} filters")
    shape = maps.shape[1:]
    return sfft.irfft2(np.sum(d.spectrum(shape) * sfft.rfft2(maps), axis=0), s=shape)


def _rfft_energy(power: np.ndarray, n2: int) -> float:
    """Full-grid Parseval sum ``sum |x|^2`` from rfft2 half-grid powers ``(..., n1, h)``."""
    w = np.full(power.shape[-1], 2.0)
    w[0] = 1.0
    if n2 % 2 == 0:
        w[-1] = 1.0
    return float(np.sum(power * w) / (power.shape[-2] * n2))


def cbpdn_objective(d: ConvDictionary, maps: np.ndarray, signal: np.ndarray,
                    Lambda: float, tau_g: float = 0.0) -> float:
    """``1/2||D m - s||^2 + Lambda ||m||_1 + tau_g/2 (||G0 m||^2 + ||G1 m||^2)``."""
    maps = np.asarray(maps, dtype=np.float64)
    r = reconstruct(d, maps) - signal
    obj = 0.5 * np.sum(r**2)
    if Lambda:
        obj += Lambda * np.sum(np.abs(maps))
    if tau_g:
        g = gradient_energy_spectrum(maps.shape[1:])
        obj += 0.5 * tau_g * _rfft_energy(g * np.abs(sfft.rfft2(maps)) ** 2, maps.shape[2])
    return float(obj)


def cbpdn_gr_solve(d: ConvDictionary, signal: np.ndarray, p: CscParams, *,
                   init: FeatureMapStack | None = None,
                   record: bool = False) -> FeatureMapStack:
    """Solve gradient-regularized CBPDN for one 2-D slice by ADMM.

    Each sweep solves the coefficient subproblem per frequency by
    Sherman-Morrison, soft-thresholds to get the sparse iterate, and takes
    a unit step on the scaled multiplier.  Stops after ``p.inner_iters``
    sweeps or once ``||M - B|| / max(||M||, ||B||) < p.tol``, and returns
    the sparse iterate ``B``.  ``init`` warm-starts ``B`` and the
    multiplier; ``record`` fills ``stats`` with per-sweep diagnostics.
    """
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim != 2:
        raise ValueError(f"signal must be a 2-D slice, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise ValueError("signal contains non-finite values")
    return _Solver(d, s.shape, p).solve(s, init, record, d)


def csc_denoise(d: ConvDictionary, noisy: np.ndarray, p: CscParams,
                lambda_lp: float = 5.0, *, scale: float = 1.0,
                state: list | None = None) -> np.ndarray:
    """Keep each frontal slice's smooth part and re-code its detail part.

    ``scale`` multiplies the detail part before coding and divides the
    reconstruction afterwards, so ``p`` may be stated for 8-bit
    intensities while the tensor lives in [0, 1].  ``state`` is an
    optional list with one :class:`FeatureMapStack` (or None) per slice,
    read for warm starts and overwritten with the new solutions.
    """
    x = as_tensor3(noisy, "noisy")
    if scale <= 0:
        raise ValueError("scale must be positive")
    out = np.empty_like(x)
    solver = None
    for k in range(x.shape[2]):
        low, high = lowpass_split(x[:, :, k], lambda_lp)
        if not np.any(high):
            out[:, :, k] = low
            continue
        solver = solver or _Solver(d, high.shape, p)
        init = state[k] if state is not None else None
        fm = solver.solve(high * scale, init, False, d)
        if state is not None:
            state[k] = fm
        out[:, :, k] = low + reconstruct(d, fm) / scale
    return out


# ---------------------------------------------------------------------------
# dictionary files

def save_dictionary(d: ConvDictionary, path) -> None:
    tio.write_tns(path, d.filters)


def load_dictionary(path) -> ConvDictionary:
    """Read a TNS1 ``(r, r, K)`` dictionary and check the filter norms.

    Norms off by more than 1e-6 but at most 1e-3 are renormalized with a
    warning; larger deviations and zero filters are rejected.
    """
    f = tio.read_tns(path)
    if f.shape[0] != f.shape[1]:
        raise DictionaryError(f"{path}: filters must be square, got dims {f.shape}")
    norms = np.sqrt(np.sum(f**2, axis=(0, 1)))
    if np.any(norms == 0):
        raise DictionaryError(f"{path}: zero filter at index {int(np.argmin(norms))}")
    dev = float(np.max(np.abs(norms - 1.0)))
    if dev > RENORM_LIMIT:
        raise DictionaryError(f"{path}: filter norms deviate from 1 by {dev:.3g}")
    if dev > NORM_TOL:
        warnings.warn(f"{path}: renormalizing filters (max norm deviation {dev:.3g})",
                      stacklevel=2)
        f = f / norms
    return ConvDictionary(f)


# ---------------------------------------------------------------------------
# dictionary learning

def _project_filters(full: np.ndarray, r: int) -> np.ndarray:
    """Crop ``(K, n1, n2)`` filters to ``r x r`` support and scale to unit norm."""
    f = np.array(full[:, :r, :r])
    n = np.sqrt(np.sum(f**2, axis=(1, 2)))
    n[n == 0] = 1.0
    return f / n[:, None, None]


def _training_objective(d: ConvDictionary, maps: list, signals: list, Lambda: float) -> float:
    return sum(cbpdn_objective(d, m, s, Lambda) for m, s in zip(maps, signals))


def _dictionary_step(d: ConvDictionary, maps: list, signals: list, steps: int) -> ConvDictionary:
    """Projected gradient steps on the filters for the summed data term."""
    shape = signals[0].shape
    mhats = [sfft.rfft2(m) for m in maps]
    shats = [sfft.rfft2(s) for s in signals]
    # Lipschitz bound: largest per-frequency trace of sum_s m_s m_s^H
    lip = float(np.max(sum(np.sum(np.abs(mh) ** 2, axis=0) for mh in mhats)))
    if lip == 0:
        return d
    f = np.moveaxis(d.filters, 2, 0)
    pad = ((0, 0), (0, shape[0] - d.r), (0, shape[1] - d.r))
    for _ in range(steps):
        dhat = sfft.rfft2(f, s=shape)
        grad_hat = np.zeros_like(dhat)
        for mh, sh in zip(mhats, shats):
            resid = np.einsum("kij,kij->ij", dhat, mh) - sh
            grad_hat += np.conj(mh) * resid
        grad = sfft.irfft2(grad_hat, s=shape)
        f = _project_filters(np.pad(f, pad) - grad / lip, d.r)
    return ConvDictionary(np.moveaxis(f, 0, 2))


def train_dictionary(images: list, K: int, r: int, p: CscParams | None = None,
                     outer_iters: int = 10, seed: int = 0, *,
                     lambda_lp: float = 5.0, scale: float = 1.0,
                     filter_steps: int = 10, history: list | None = None) -> ConvDictionary:
    """Learn a convolutional dictionary from the detail parts of ``images``.

    Alternates sparse coding of every frontal slice (warm started) with
    projected gradient steps on the filters.  Either half-step is kept
    only if it does not raise the summed CBPDN objective, so the values
    appended to ``history`` never increase.
    """
    if K < 1 or r < 1 or outer_iters < 1:
        raise ValueError("K, r and outer_iters must be >= 1")
    if not images:
        raise ValueError("training set is empty")
    p = p or CscParams()
    signals = []
    for img in images:
        x = as_tensor3(img, "training image")
        for k in range(x.shape[2]):
            signals.append(lowpass_split(x[:, :, k], lambda_lp)[1] * scale)
    shapes = {s.shape for s in signals}
    if len(shapes) != 1:
        raise ValueError(f"training slices must share one shape, got {sorted(shapes)}")
    shape = signals[0].shape

    d = ConvDictionary.random(K, r, seed)
    stacks = [FeatureMapStack(np.zeros((K, *shape))) for _ in signals]
    maps = [st.maps for st in stacks]
    obj = _training_objective(d, maps, signals, p.Lambda)
    if history is not None:
        history.append(obj)
    for it in range(outer_iters):
        solver = _Solver(d, shape, p)
        new_stacks = [solver.solve(s, st, False, d) for s, st in zip(signals, stacks)]
        new_maps = [st.maps for st in new_stacks]
        cand = _training_objective(d, new_maps, signals, p.Lambda)
        if cand <= obj:
            stacks, maps, obj = new_stacks, new_maps, cand
        d_new = _dictionary_step(d, maps, signals, filter_steps)
        cand = _training_objective(d_new, maps, signals, p.Lambda)
        if cand <= obj:
            d, obj = d_new, cand
            # multipliers belong to the previous dictionary
            stacks = [FeatureMapStack(m) for m in maps]
        logger.info("dictionary round %d: objective %.6g", it + 1, obj)
        if history is not None:
            history.append(obj)
    return d
