"""Tensor file I/O: the TNS1 binary format and 8-bit RGB PNG images.

TNS1 layout (all integers little-endian)::

    bytes 0-3   magic b"TNS1"
    byte  4     ndim, always 3
    bytes 5-28  n1, n2, n3 as uint64
    rest        n1*n2*n3 float64 values, mode-1 index fastest
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNS1"
_HEADER = struct.Struct("<4sB3Q")


class FormatError(ValueError):
    """Raised for unreadable, corrupt or unsupported input files."""


def write_tns(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise FormatError(f"TNS1 stores 3-way tensors only, got shape {x.shape}")
    header = _HEADER.pack(MAGIC, 3, *x.shape)
    payload = np.asarray(x, dtype="<f8").tobytes(order="F")
    Path(path).write_bytes(header + payload)


def read_tns(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a TNS1 header")
    magic, ndim, n1, n2, n3 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if ndim != 3:
        raise FormatError(f"{path}: ndim {ndim} unsupported, expected 3")
    count = n1 * n2 * n3
    body = raw[_HEADER.size:]
    if len(body) != 8 * count:
        raise FormatError(
            f"{path}: dims {(n1, n2, n3)} need {8 * count} data bytes, found {len(body)}"
        )
    data = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return data.reshape((n1, n2, n3), order="F")


def read_png(path) -> np.ndarray:
    """Load an 8-bit image as an ``H x W x 3`` tensor scaled to [0, 1]."""
    from PIL import Image

    try:
        with Image.open(path) as im:
            if im.mode not in ("RGB", "RGBA", "L", "P", "LA"):
                raise FormatError(f"{path}: unsupported image mode {im.mode}")
            rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except FormatError:
        raise
    except Exception as exc:  # PIL raises a zoo of exception types
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    return rgb.astype(np.float64) / 255.0


def write_png(path, x: np.ndarray) -> None:
    """Quantize a [0, 1] tensor with round-half-to-even and save it as PNG."""
    from PIL import Image

    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] not in (1, 3):
        raise FormatError(f"PNG output needs H x W x 1 or H x W x 3, got {x.shape}")
    q = np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)
    img = Image.fromarray(q[:, :, 0] if q.shape[2] == 1 else q)
    img.save(path, format="PNG")


def load_input(path) -> np.ndarray:
    """Load a tensor from a ``.tns`` (TNS1) or ``.png`` file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(MAGIC):
        return read_tns(path)
    if head.startswith(b"\x89PNG\r\n\x1a\n"):
        return read_png(path)
    raise FormatError(f"{path}: unsupported format (expected TNS1 or PNG)")


def save_output(x: np.ndarray, path) -> None:
    """Write ``x`` as PNG when ``path`` ends in ``.png``, otherwise as TNS1."""
    if str(path).lower().endswith(".png"):
        write_png(path, x)
    else:
        write_tns(path, x)
