"""Dense third-order tensors and the t-product algebra.

Tensors are plain ``numpy.ndarray`` objects of shape ``(n1, n2, n3)`` and
dtype float64.  The canonical linear layout is column-major (mode-1 index
fastest), which is what :func:`unfold` with ``mode=1`` and the TNS1 file
format use.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

#: Maximum tolerated relative imaginary residue after an inverse mode-3 FFT.
IMAG_TOL = 1e-8


class TensorShapeError(ValueError):
    """Raised when tensor dimensions are incompatible with an operation."""


class TSvdFactors(NamedTuple):
    """Factors of ``x = U * S * V^T`` under the t-product."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray


def as_tensor3(x, name: str = "x") -> np.ndarray:
    """Validate and convert ``x`` to a finite float64 array with three modes."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise TensorShapeError(f"{name} must have 3 modes, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise TensorShapeError(f"{name} has an empty mode: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _check_mode(mode: int) -> int:
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")
    return mode - 1


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``k`` matricization with ``k`` in {1, 2, 3}.

    Columns are ordered with the remaining indices in increasing mode
    order, earlier modes varying fastest.  For ``mode=1`` this is a
    reshape of the column-major layout.
    """
    ax = _check_mode(mode)
    x = np.asarray(x)
    if x.ndim != 3:
        raise TensorShapeError(f"expected a 3-way tensor, got shape {x.shape}")
    return np.reshape(np.moveaxis(x, ax, 0), (x.shape[ax], -1), order="F")


def fold(m: np.ndarray, mode: int, dims) -> np.ndarray:
    """Inverse of :func:`unfold` for a tensor of shape ``dims``."""
    ax = _check_mode(mode)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3:
        raise TensorShapeError(f"dims must have length 3, got {dims}")
    m = np.asarray(m)
    rest = [d for i, d in enumerate(dims) if i != ax]
    expected = (dims[ax], rest[0] * rest[1])
    if m.shape != expected:
        raise TensorShapeError(
            f"mode-{mode} unfolding of {dims} must have shape {expected}, got {m.shape}"
        )
    moved = np.reshape(m, (dims[ax], *rest), order="F")
    return np.moveaxis(moved, 0, ax)


def fft_mode3(x: np.ndarray) -> np.ndarray:
    """Unnormalized DFT of every tube ``x[i, j, :]``."""
    return np.fft.fft(np.asarray(x), axis=2)


def ifft_mode3(y: np.ndarray, tol: float = IMAG_TOL) -> np.ndarray:
    """Inverse of :func:`fft_mode3`, returning a real tensor.

    Raises ``ValueError`` when the imaginary part of the inverse exceeds
    ``tol`` relative to the magnitude of the result, which means the
    spectrum was not conjugate symmetric along mode 3.
    """
    z = np.fft.ifft(np.asarray(y), axis=2)
    scale = max(np.linalg.norm(z), np.finfo(float).tiny)
    imag = np.linalg.norm(z.imag)
    if imag > tol * scale:
        raise ValueError(
            f"inverse mode-3 FFT has relative imaginary residue {imag / scale:.3e} > {tol:g}"
        )
    return np.ascontiguousarray(z.real)


def frontal_slices(x: np.ndarray) -> list[np.ndarray]:
    return [x[:, :, k] for k in range(x.shape[2])]


def identity_tensor(n: int, n3: int) -> np.ndarray:
    """Identity under the t-product: first frontal slice ``I_n``, the rest zero."""
    e = np.zeros((n, n, n3))
    e[:, :, 0] = np.eye(n)
    return e


def t_transpose(x: np.ndarray) -> np.ndarray:
    """Tensor transpose: transpose each frontal slice and reverse slices 2..n3."""
    x = np.asarray(x)
    xt = np.transpose(x, (1, 0, 2))
    order = [0] + list(range(x.shape[2] - 1, 0, -1))
    return xt[:, :, order]


def _half_slices(n3: int) -> int:
    # Fourier slices 0..n3//2 determine the rest by conjugate symmetry.
    return n3 // 2 + 1


def _mirror(yhat: np.ndarray) -> None:
    n3 = yhat.shape[2]
    for k in range(_half_slices(n3), n3):
        yhat[:, :, k] = np.conj(yhat[:, :, n3 - k])


def t_product(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """t-product of ``x`` (n1 x n2 x n3) and ``y`` (n2 x n4 x n3).

    Computed as slice-wise matrix products of the mode-3 Fourier
    transforms followed by an inverse transform.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 3 or y.ndim != 3:
        raise TensorShapeError("t_product needs two 3-way tensors")
    if x.shape[1] != y.shape[0] or x.shape[2] != y.shape[2]:
        raise TensorShapeError(f"cannot t-multiply shapes {x.shape} and {y.shape}")
    xh = fft_mode3(x)
    yh = fft_mode3(y)
    zh = np.einsum("ijk,jlk->ilk", xh, yh)
    return ifft_mode3(zh)


def bcirc(x: np.ndarray) -> np.ndarray:
    """Block-circulant matrix of shape ``(n1*n3, n2*n3)``.

    Memory grows as ``n3**2``; intended as a test oracle.
    """
    x = np.asarray(x)
    n1, n2, n3 = x.shape
    out = np.empty((n1 * n3, n2 * n3), dtype=x.dtype)
    for i in range(n3):
        for j in range(n3):
            out[i * n1:(i + 1) * n1, j * n2:(j + 1) * n2] = x[:, :, (i - j) % n3]
    return out


def bvec(x: np.ndarray) -> np.ndarray:
    """Stack the frontal slices vertically into an ``(n1*n3, n2)`` matrix."""
    x = np.asarray(x)
    n1, n2, n3 = x.shape
    return np.transpose(x, (2, 0, 1)).reshape(n1 * n3, n2)


def bvfold(m: np.ndarray, n3: int) -> np.ndarray:
    """Inverse of :func:`bvec`."""
    m = np.asarray(m)
    if m.shape[0] % n3:
        raise TensorShapeError(f"{m.shape[0]} rows do not split into {n3} slices")
    n1 = m.shape[0] // n3
    return np.transpose(m.reshape(n3, n1, m.shape[1]), (1, 2, 0))


def bdiag(xhat: np.ndarray) -> np.ndarray:
    """Block-diagonal matrix of the frontal slices of ``xhat``."""
    from scipy.linalg import block_diag

    return block_diag(*frontal_slices(np.asarray(xhat)))


def t_svd(x: np.ndarray) -> TSvdFactors:
    """t-SVD ``x = U * S * V^T`` via per-Fourier-slice matrix SVDs.

    Only slices ``0..n3//2`` are decomposed; the remaining slices are
    filled by conjugate symmetry so that all factors are real.
    """
    x = as_tensor3(x)
    n1, n2, n3 = x.shape
    xh = fft_mode3(x)
    uh = np.zeros((n1, n1, n3), dtype=complex)
    sh = np.zeros((n1, n2, n3), dtype=complex)
    vh = np.zeros((n2, n2, n3), dtype=complex)
    r = min(n1, n2)
    for k in range(_half_slices(n3)):
        slab = xh[:, :, k]
        if 2 * k % n3 == 0:
            # DC and Nyquist slices are real for real input
            slab = slab.real
        u, s, vt = np.linalg.svd(slab, full_matrices=True)
        uh[:, :, k] = u
        sh[np.arange(r), np.arange(r), k] = s
        vh[:, :, k] = np.conj(vt.T)
    for arr in (uh, sh, vh):
        _mirror(arr)
    return TSvdFactors(ifft_mode3(uh), ifft_mode3(sh), ifft_mode3(vh))


def tubal_rank(x: np.ndarray, tol: float | None = None) -> int:
    """Number of nonzero singular tubes of ``x``.

    A tube counts as nonzero when any of its Fourier-domain singular values
    exceeds ``tol`` (default: ``max(dims) * eps * largest singular value``).
    """
    x = as_tensor3(x)
    xh = fft_mode3(x)
    sv = np.stack(
        [np.linalg.svd(xh[:, :, k], compute_uv=False) for k in range(x.shape[2])],
        axis=1,
    )
    if tol is None:
        tol = max(x.shape) * np.finfo(float).eps * (sv.max() if sv.size else 0.0)
    return int(np.sum(np.any(sv > tol, axis=1)))
