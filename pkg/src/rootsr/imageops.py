"""Raster primitives shared by every stage of the pipeline.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in {1, 3}
and float64 values in ``[0, 1]``. 8-bit data only exists at the PNG boundary.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Union

import numpy as np
from PIL import Image

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

PathOrBytes = Union[str, os.PathLike, bytes]


class BoundsError(ValueError):
    """A rectangle or shift reaches outside the source image."""


class ImageFormatError(ValueError):
    """PNG payload cannot be decoded into a supported image."""


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    height: int
    width: int

    def shifted(self, dy: int = 0, dx: int = 0) -> "Rect":
        return Rect(self.top + dy, self.left + dx, self.height, self.width)


def as_image(img) -> np.ndarray:
    """Validate and normalise an array to the ``(H, W, C)`` float64 layout.

    2-D input is promoted to a single channel.
    """
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected (H, W, 1|3) image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"empty image of shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def crop(img: np.ndarray, r: Rect) -> np.ndarray:
    img = as_image(img)
    h, w = img.shape[:2]
    if r.top < 0 or r.left < 0 or r.height < 1 or r.width < 1 or r.top + r.height > h or r.left + r.width > w:
        raise BoundsError(f"{r} outside image of size {h}x{w}")
    return img[r.top : r.top + r.height, r.left : r.left + r.width].copy()


# --- separable resampling -------------------------------------------------


def _linear_kernel(t: np.ndarray) -> np.ndarray:
    t = np.abs(t)
    return np.where(t < 1.0, 1.0 - t, 0.0)


def _cubic_kernel(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    t = np.abs(t)
    t2, t3 = t * t, t * t * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


_KERNELS = {"bilinear": (_linear_kernel, 1), "bicubic": (_cubic_kernel, 2)}


def sampling_matrix(n_in: int, coords: np.ndarray, mode: str = "bilinear", boundary: str = "replicate") -> np.ndarray:
    """Build the ``(len(coords), n_in)`` matrix that interpolates a 1-D signal at ``coords``.

    With ``boundary="replicate"`` taps falling outside are clamped to the edge
    sample; with ``"zero"`` they contribute nothing.
    """
    kernel, support = _KERNELS[mode]
    coords = np.asarray(coords, dtype=np.float64)
    base = np.floor(coords).astype(np.int64)
    mat = np.zeros((coords.size, n_in))
    rows = np.arange(coords.size)
    for off in range(-support + 1, support + 1):
        idx = base + off
        wgt = kernel(coords - idx)
        if boundary == "replicate":
            np.add.at(mat, (rows, np.clip(idx, 0, n_in - 1)), wgt)
        elif boundary == "zero":
            inside = (idx >= 0) & (idx < n_in)
            np.add.at(mat, (rows[inside], idx[inside]), wgt[inside])
        else:
            raise ValueError(f"unknown boundary policy {boundary!r}")
    return mat


def _apply_separable(img: np.ndarray, my: np.ndarray, mx: np.ndarray) -> np.ndarray:
    return np.einsum("ij,jkc,lk->ilc", my, img, mx)


def _resize_coords(n_in: int, n_out: int) -> np.ndarray:
    # pixel centres aligned (half-pixel convention)
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize(img: np.ndarray, out_h: int, out_w: int, mode: str = "bilinear") -> np.ndarray:
    """Resample to ``out_h x out_w``.

    ``area`` averages non-overlapping ``k x k`` blocks and only accepts an
    integer downscale factor shared by both axes. ``bilinear`` and ``bicubic``
    are separable, edge-clamped, and use the a=-0.5 cubic kernel.
    """
    img = as_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be >= 1")
    h, w, c = img.shape
    if mode == "area":
        if h % out_h or w % out_w or h // out_h != w // out_w:
            raise ValueError(f"area mode needs an integer factor shared by both axes: {h}x{w} -> {out_h}x{out_w}")
        k = h // out_h
        return img.reshape(out_h, k, out_w, k, c).mean(axis=(1, 3))
    if mode not in _KERNELS:
        raise ValueError(f"unknown resize mode {mode!r}")
    my = sampling_matrix(h, _resize_coords(h, out_h), mode)
    mx = sampling_matrix(w, _resize_coords(w, out_w), mode)
    return np.clip(_apply_separable(img, my, mx), 0.0, 1.0)


def translate(img: np.ndarray, dy: float, dx: float, boundary: str = "replicate") -> np.ndarray:
    """Shift content by ``(dy, dx)`` pixels; positive ``dy`` moves content down.

    ``out(y, x) = in(y - dy, x - dx)`` sampled bilinearly.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    if abs(dy) >= h or abs(dx) >= w:
        raise BoundsError(f"shift ({dy}, {dx}) too large for {h}x{w} image")
    my = sampling_matrix(h, np.arange(h) - dy, "bilinear", boundary)
    mx = sampling_matrix(w, np.arange(w) - dx, "bilinear", boundary)
    return np.clip(_apply_separable(img, my, mx), 0.0, 1.0)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = as_image(img)
    if img.shape[2] == 1:
        return img
    return (img @ LUMA_WEIGHTS)[:, :, None]


# --- 8-bit PNG boundary ---------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(as_image(img), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img: np.ndarray) -> bytes:
    u8 = to_uint8(img)
    pil = Image.fromarray(u8[:, :, 0] if u8.shape[2] == 1 else u8, mode="L" if u8.shape[2] == 1 else "RGB")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    try:
        pil = Image.open(io.BytesIO(data))
        pil.load()
    except Exception as exc:  # PIL raises a zoo of types for corrupt input
        raise ImageFormatError(f"cannot decode PNG: {exc}") from exc
    if pil.format != "PNG":
        raise ImageFormatError(f"not a PNG (got {pil.format})")
    if pil.mode not in ("L", "RGB", "1", "P"):
        raise ImageFormatError(f"unsupported PNG mode {pil.mode!r}; only 8-bit gray/RGB")
    if pil.mode in ("1", "P"):
        pil = pil.convert("L" if pil.mode == "1" else "RGB")
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return as_image(arr)


def write_png(path: os.PathLike | str, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def read_png(src: PathOrBytes) -> np.ndarray:
    if isinstance(src, (bytes, bytearray)):
        return decode_png(bytes(src))
    with open(src, "rb") as fh:
        return decode_png(fh.read())
