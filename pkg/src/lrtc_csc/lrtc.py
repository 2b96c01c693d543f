"""Low-rank tensor completion by ADMM with an optional CSC denoising step.

Four methods share one outer loop:

``halrtc``    sum of nuclear norms of the unfoldings (SNN) only
``lrtc_tnn``  tensor nuclear norm (TNN) only
``csc1``      SNN plus a CSC denoiser on an auxiliary copy Z of X
``csc2``      TNN plus the same denoiser

Each iteration updates the low-rank variable(s), then Z (CSC methods),
then X under the observation constraint, then the multipliers.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .csc import ConvDictionary, CscParams, csc_denoise
from .metrics import psnr_mean, relative_error
from .prox import SnnWeights, svt_fourier_slices, svt_matrix
from .tensor import as_tensor3, fold, unfold

logger = logging.getLogger(__name__)

METHODS = ("csc1", "csc2", "halrtc", "lrtc_tnn")
_ALIASES = {"tnn": "lrtc_tnn", "snn": "halrtc"}


class ConfigError(ValueError):
    """Raised when a configuration is inconsistent with the chosen method."""


class DivergenceError(RuntimeError):
    """Raised when an iterate becomes non-finite."""


@dataclass(frozen=True)
class Observation:
    """Observed tensor ``data`` and boolean ``mask`` of observed entries."""

    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=bool)
        if data.ndim != 3:
            raise ValueError(f"observation must be a 3-way tensor, got {data.shape}")
        if mask.shape != data.shape:
            raise ValueError(f"mask shape {mask.shape} != data shape {data.shape}")
        if not mask.any():
            raise ValueError("mask has no observed entries")
        if not np.all(np.isfinite(data[mask])):
            raise ValueError("observed entries must be finite")
        # unobserved entries are ignored; zero them so they cannot leak
        data = np.where(mask, data, 0.0)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "mask", mask)

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class LrtcConfig:
    """Solver settings.

    ``beta1`` is a scalar or a per-mode triple (SNN methods).  ``snn_modes``
    selects which unfoldings enter the SNN terms: ``"all"`` uses modes
    1..3, ``"leading"`` uses modes 1..N-1.  ``csc_scale`` multiplies the
    data before CSC coding so that ``csc`` parameters are stated for
    8-bit intensities.  ``warm_start`` carries CSC maps and multipliers
    across outer iterations.
    """

    method: str = "halrtc"
    alpha: SnnWeights = field(default_factory=SnnWeights)
    beta1: float | tuple[float, float, float] = 0.1
    beta2: float = 0.1
    csc: CscParams = field(default_factory=CscParams)
    lambda_lp: float = 5.0
    dictionary: ConvDictionary | None = None
    max_outer_iters: int = 200
    outer_tol: float = 1e-5
    snn_modes: str = "all"
    csc_scale: float = 255.0
    warm_start: bool = True

    def __post_init__(self):
        method = _ALIASES.get(self.method, self.method)
        if method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; choose from {METHODS}")
        object.__setattr__(self, "method", method)
        if isinstance(self.alpha, (list, tuple)):
            object.__setattr__(self, "alpha", SnnWeights(tuple(self.alpha)))
        b1 = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        if b1.shape not in ((1,), (3,)) or np.any(b1 <= 0):
            raise ConfigError(f"beta1 must be a positive scalar or triple, got {self.beta1!r}")
        if method == "lrtc_tnn" or method == "csc2":
            if b1.shape != (1,):
                raise ConfigError("TNN methods take a scalar beta1")
        if self.uses_csc:
            if not self.beta2 > 0:
                raise ConfigError("beta2 must be positive")
            if self.dictionary is None:
                raise ConfigError(f"method {method} needs a dictionary")
        elif self.dictionary is not None:
            raise ConfigError(f"method {method} takes no dictionary")
        if self.snn_modes not in ("all", "leading"):
            raise ConfigError("snn_modes must be 'all' or 'leading'")
        if self.max_outer_iters < 1 or self.outer_tol < 0:
            raise ConfigError("max_outer_iters must be >= 1 and outer_tol >= 0")

    @property
    def uses_csc(self) -> bool:
        return self.method in ("csc1", "csc2")

    @property
    def uses_snn(self) -> bool:
        return self.method in ("csc1", "halrtc")

    def mode_betas(self) -> np.ndarray:
        b = np.atleast_1d(np.asarray(self.beta1, dtype=float))
        return np.repeat(b, 3) if b.size == 1 else b

    def active_modes(self) -> list[int]:
        return [1, 2, 3] if self.snn_modes == "all" else [1, 2]


@dataclass
class IterationRecord:
    iter: int
    re: float
    psnr: float
    residual: float
    primal: float
    seconds: float


@dataclass
class CompletionResult:
    recovered: np.ndarray
    trace: list[IterationRecord]
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.trace)


# ---------------------------------------------------------------------------
# subproblem updates

def init_estimate(obs: Observation) -> np.ndarray:
    """Observed entries copied, the rest filled with the observed mean."""
    x = np.full(obs.shape, obs.data[obs.mask].mean())
    x[obs.mask] = obs.data[obs.mask]
    return x


def f_update_snn(x: np.ndarray, omega1: Sequence[np.ndarray], cfg: LrtcConfig) -> list[np.ndarray]:
    """``F_k = SVT(X_(k) - w_k / b_k, a_k / b_k)`` for each active mode."""
    betas = cfg.mode_betas()
    out = []
    for k, om in zip(cfg.active_modes(), omega1):
        b = betas[k - 1]
        out.append(svt_matrix(unfold(x, k) - om / b, cfg.alpha.alpha[k - 1] / b))
    return out


def f_update_tnn(x: np.ndarray, omega1: np.ndarray, beta1: float) -> np.ndarray:
    """``F = SVT over Fourier slices of (X - w / b)`` with threshold ``1 / b``."""
    return svt_fourier_slices(x - omega1 / beta1, 1.0 / beta1)


def _restore_observed(x: np.ndarray, obs: Observation) -> np.ndarray:
    x[obs.mask] = obs.data[obs.mask]
    return x


def x_update_i(fk: Sequence[np.ndarray], omega1: Sequence[np.ndarray], z: np.ndarray | None,
               omega2: np.ndarray | None, obs: Observation, cfg: LrtcConfig) -> np.ndarray:
    """Weighted average of the folded ``F_k + w_k/b_k`` and ``Z + w2/b2``.

    ``z=None`` drops the Z term.
    """
    betas = cfg.mode_betas()
    num = np.zeros(obs.shape)
    den = 0.0
    for k, f, om in zip(cfg.active_modes(), fk, omega1):
        b = betas[k - 1]
        num += fold(b * f + om, k, obs.shape)
        den += b
    if z is not None:
        num += cfg.beta2 * z + omega2
        den += cfg.beta2
    return _restore_observed(num / den, obs)


def x_update_ii(f: np.ndarray, z: np.ndarray | None, omega1: np.ndarray,
                omega2: np.ndarray | None, obs: Observation,
                beta1: float, beta2: float = 0.0) -> np.ndarray:
    """``X = (b1 F + b2 Z + w1 + w2) / (b1 + b2)`` off the mask, data on it."""
    num = beta1 * f + omega1
    den = beta1
    if z is not None:
        num = num + beta2 * z + omega2
        den += beta2
    return _restore_observed(num / den, obs)


def multiplier_update(prev, beta: float, primal_a, primal_b):
    """Dual ascent step ``w + beta * (a - b)``."""
    return prev + beta * (np.asarray(primal_a) - np.asarray(primal_b))


# ---------------------------------------------------------------------------
# denoisers for the Z step

class PassThrough:
    """Denoiser of the trade-off-zero limit: Z is its input and carries no weight."""

    contributes = False

    def __call__(self, noisy: np.ndarray) -> np.ndarray:
        return noisy


class CscDenoiser:
    """CSC denoiser applied to ``X - w2/b2`` with optional warm starts."""

    contributes = True

    def __init__(self, cfg: LrtcConfig, n_slices: int):
        self.cfg = cfg
        self.state = [None] * n_slices if cfg.warm_start else None

    def __call__(self, noisy: np.ndarray) -> np.ndarray:
        c = self.cfg
        return csc_denoise(c.dictionary, noisy, c.csc, c.lambda_lp,
                           scale=c.csc_scale, state=self.state)


# ---------------------------------------------------------------------------
# outer loop

def complete(obs: Observation, cfg: LrtcConfig, ground_truth: np.ndarray | None = None, *,
             denoiser: Callable | None = None, peak: float = 1.0,
             callback: Callable[[int, np.ndarray], None] | None = None) -> CompletionResult:
    """Run the outer ADMM loop for ``cfg.method``.

    ``denoiser`` overrides the Z step of the CSC methods (for instance
    :class:`PassThrough`).  ``callback(i, X)`` is called after every
    outer iteration.  RE and PSNR are recorded when ``ground_truth`` is
    given, otherwise they are NaN.
    """
    if ground_truth is not None:
        ground_truth = as_tensor3(ground_truth, "ground_truth")
        if ground_truth.shape != obs.shape:
            raise ValueError("ground truth and observation shapes differ")
    if denoiser is None and cfg.uses_csc:
        denoiser = CscDenoiser(cfg, obs.shape[2])
    if denoiser is not None and not cfg.uses_csc:
        raise ConfigError(f"method {cfg.method} has no Z step to override")
    use_z = denoiser is not None and denoiser.contributes

    x = init_estimate(obs)
    if cfg.uses_snn:
        modes = cfg.active_modes()
        omega1 = [np.zeros_like(unfold(x, k)) for k in modes]
        betas = cfg.mode_betas()
    else:
        omega1 = np.zeros_like(x)
        beta1 = float(cfg.mode_betas()[0])
    omega2 = np.zeros_like(x) if use_z else None

    trace: list[IterationRecord] = []
    converged = False
    t0 = time.perf_counter()
    for i in range(1, cfg.max_outer_iters + 1):
        if cfg.uses_snn:
            fk = f_update_snn(x, omega1, cfg)
        else:
            f = f_update_tnn(x, omega1, beta1)

        z = None
        if denoiser is not None:
            zin = x - omega2 / cfg.beta2 if use_z else x
            z = denoiser(zin)

        if cfg.uses_snn:
            x_new = x_update_i(fk, omega1, z if use_z else None, omega2, obs, cfg)
        else:
            x_new = x_update_ii(f, z if use_z else None, omega1, omega2, obs,
                                beta1, cfg.beta2)
        if not np.all(np.isfinite(x_new)):
            raise DivergenceError(f"non-finite iterate at outer iteration {i}")

        if cfg.uses_snn:
            omega1 = [multiplier_update(om, betas[k - 1], F, unfold(x_new, k))
                      for k, om, F in zip(modes, omega1, fk)]
            primal = float(np.sqrt(sum(np.sum((F - unfold(x_new, k)) ** 2)
                                       for k, F in zip(modes, fk))))
        else:
            omega1 = multiplier_update(omega1, beta1, f, x_new)
            primal = float(np.linalg.norm(f - x_new))
        if use_z:
            omega2 = multiplier_update(omega2, cfg.beta2, z, x_new)
            primal = float(np.hypot(primal, np.linalg.norm(z - x_new)))

        nx = np.linalg.norm(x)
        change = float(np.linalg.norm(x_new - x) / nx) if nx > 0 else 0.0
        x = x_new
        if ground_truth is not None:
            re = relative_error(x, ground_truth)
            ps = psnr_mean(x, ground_truth, peak)
        else:
            re = ps = float("nan")
        trace.append(IterationRecord(i, re, ps, change, primal, time.perf_counter() - t0))
        if callback is not None:
            callback(i, x)
        logger.debug("iter %d change %.3e re %.4g", i, change, re)
        if change < cfg.outer_tol:
            converged = True
            break
    return CompletionResult(x, trace, converged)


def with_method(cfg: LrtcConfig, method: str, dictionary: ConvDictionary | None = None) -> LrtcConfig:
    """Copy of ``cfg`` switched to another method (dictionary swapped as needed)."""
    method = _ALIASES.get(method, method)
    needs = method in ("csc1", "csc2")
    beta1 = cfg.beta1
    if method in ("csc2", "lrtc_tnn"):
        beta1 = float(np.atleast_1d(beta1)[0])
    return replace(cfg, method=method, beta1=beta1,
                   dictionary=(dictionary or cfg.dictionary) if needs else None)
