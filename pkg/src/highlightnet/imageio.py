"""8-bit PNG and binary PPM/PGM reading and writing, plus area resampling."""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import atomic_write
from .errors import InvalidArgumentError

_FORMATS = {".png": "PNG", ".ppm": "PPM", ".pgm": "PPM", ".pnm": "PPM"}
_MODES_8BIT = {"L", "LA", "P", "RGB", "RGBA", "1"}


def image_format(path: str | os.PathLike) -> str:
    fmt = _FORMATS.get(Path(path).suffix.lower())
    if fmt is None:
        raise InvalidArgumentError(f"unsupported image type: {path} (use .png, .ppm or .pgm)")
    return fmt


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Decode to an HxWx3 float32 array in [0, 1] (gray inputs are replicated)."""
    image_format(path)
    with Image.open(path) as im:
        if im.format not in ("PNG", "PPM"):
            raise InvalidArgumentError(f"{path}: decoded as {im.format}, expected PNG or PPM/PGM")
        if im.mode not in _MODES_8BIT:
            raise InvalidArgumentError(f"{path}: unsupported pixel mode {im.mode} (8-bit only)")
        rgb = np.asarray(im.convert("RGB"), dtype=np.float32)
    return rgb / np.float32(255)


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Scale [0, 1] floats by 255 with round-half-up and clamp to 0..255."""
    v = np.floor(np.asarray(values, dtype=np.float64) * 255.0 + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def write_image(path: str | os.PathLike, values: np.ndarray) -> None:
    """Encode an HxW (gray) or HxWx3 (RGB) float array atomically."""
    fmt = image_format(path)
    arr = to_uint8(values)
    if arr.ndim == 3 and arr.shape[2] == 3:
        mode = "RGB"
    elif arr.ndim == 2:
        mode = "L"
    else:
        raise InvalidArgumentError(f"cannot encode array of shape {arr.shape}")
    if fmt == "PPM" and Path(path).suffix.lower() == ".pgm" and mode != "L":
        raise InvalidArgumentError("PGM output needs a gray image")
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format=fmt)
    atomic_write(path, buf.getvalue())


def _area_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i holds the fractional overlap of output cell i with each input pixel."""
    edges = np.arange(n_out + 1) * (n_in / n_out)
    lo, hi = edges[:-1, None], edges[1:, None]
    px = np.arange(n_in)[None, :]
    overlap = np.clip(np.minimum(hi, px + 1) - np.maximum(lo, px), 0, None)
    return overlap / overlap.sum(axis=1, keepdims=True)


def resize_area(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area-average resampling of an HxW or HxWxC image."""
    img = np.asarray(img, dtype=np.float64)
    rows = _area_matrix(img.shape[0], height)
    cols = _area_matrix(img.shape[1], width)
    out = np.einsum("ih,hw...,jw->ij...", rows, img, cols, optimize=True)
    return out.astype(np.float32)
