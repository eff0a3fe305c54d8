"""Fourier-domain shift estimation and feature warping.

Sign convention follows :func:`rootsr.imageops.translate`: an estimate ``s``
satisfies ``translate(query, s.dy, s.dx) ~= ref``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError
from .imageops import sampling_matrix

EPS = 1e-12


@dataclass(frozen=True)
class ShiftEstimate:
    dy: float
    dx: float
    peak: float

    def to_dict(self) -> dict:
        return {"dy": self.dy, "dx": self.dx, "peak": self.peak}


def _as_map(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        # (C, H, W) feature stack -> channel mean
        a = a.mean(axis=0)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D map, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("map contains non-finite values")
    return a


def _is_flat(a: np.ndarray) -> bool:
    return float(np.ptp(a)) <= 1e-12 * max(1.0, float(np.abs(a).max()))


def phase_correlate(ref, query) -> ShiftEstimate:
    """Integer-pixel shift that maps ``query`` onto ``ref``."""
    ref, query = _as_map(ref), _as_map(query)
    if ref.shape != query.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {query.shape}")
    h, w = ref.shape
    if h < 8 or w < 8:
        raise ValueError(f"maps must be at least 8x8, got {h}x{w}")
    if _is_flat(ref) or _is_flat(query):
        raise DegenerateInputError("constant map has no spectrum beyond DC")

    cross = np.fft.fft2(ref) * np.conj(np.fft.fft2(query))
    surface = np.real(np.fft.ifft2(cross / np.maximum(np.abs(cross), EPS)))
    iy, ix = np.unravel_index(int(np.argmax(surface)), surface.shape)
    peak = float(surface[iy, ix])
    dy = iy - h if iy > h // 2 else iy
    dx = ix - w if ix > w // 2 else ix
    return ShiftEstimate(float(dy), float(dx), peak)


def estimate_vertical_subpixel_shift(ref, query, upsample: str = "fourier") -> ShiftEstimate:
    """Half-pixel vertical shift: correlate on a 2x grid, keep only ``dy``.

    ``upsample="fourier"`` zero-pads the spectrum; ``"bilinear"`` interpolates
    spatially, but its spectral images near Nyquist bias the whitened peak
    towards whole-pixel shifts, so it is kept for comparison only.
    """
    ref, query = _as_map(ref), _as_map(query)
    if ref.shape != query.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {query.shape}")
    if upsample == "fourier":
        up = [fourier_upsample2(m) for m in (ref, query)]
    elif upsample == "bilinear":
        up = [bilinear_upsample2(m) for m in (ref, query)]
    else:
        raise ValueError(f"unknown upsample mode {upsample!r}")
    est = phase_correlate(*up)
    return ShiftEstimate(est.dy / 2.0, 0.0, est.peak)


def bilinear_upsample2(m: np.ndarray) -> np.ndarray:
    # resize() clamps to [0, 1]; feature maps are unbounded, so apply the kernels directly
    h, w = m.shape
    my = sampling_matrix(h, (np.arange(2 * h) + 0.5) / 2 - 0.5)
    mx = sampling_matrix(w, (np.arange(2 * w) + 0.5) / 2 - 0.5)
    return my @ m @ mx.T


def _split_nyquist(spec: np.ndarray, axis: int) -> np.ndarray:
    # centred spectrum of even length: the lone -n/2 bin becomes two halves at +-n/2
    n = spec.shape[axis]
    if n % 2:
        return spec
    edge = np.take(spec, [0], axis=axis) / 2
    return np.concatenate([edge, np.take(spec, np.arange(1, n), axis=axis), edge], axis=axis)


def fourier_upsample2(m: np.ndarray) -> np.ndarray:
    """Band-limited 2x upsampling by spectral zero-padding (sample ``2k`` equals input ``k``)."""
    h, w = m.shape
    spec = np.fft.fftshift(np.fft.fft2(m))
    spec = _split_nyquist(_split_nyquist(spec, 0), 1)
    out = np.zeros((2 * h, 2 * w), dtype=complex)
    top = h - spec.shape[0] // 2
    left = w - spec.shape[1] // 2
    out[top : top + spec.shape[0], left : left + spec.shape[1]] = spec
    return 4.0 * np.real(np.fft.ifft2(np.fft.ifftshift(out)))


def vertical_warp_matrix(h: int, dy: float) -> np.ndarray:
    """``(h, h)`` bilinear/replicate operator realising a vertical translation by ``dy``."""
    if abs(dy) >= h:
        raise ValueError(f"|dy|={abs(dy)} must be smaller than height {h}")
    return sampling_matrix(h, np.arange(h) - dy, "bilinear", "replicate")


def warp_features(features, shift: ShiftEstimate):
    """Translate every channel of a ``(..., H, W)`` stack vertically by ``shift.dy``.

    Works on numpy arrays and on torch tensors; for tensors the result is
    differentiable in the feature values while the shift stays a constant.
    """
    h = features.shape[-2]
    mat = vertical_warp_matrix(h, float(shift.dy))
    if isinstance(features, np.ndarray):
        return np.einsum("ij,...jw->...iw", mat, features)
    import torch

    op = torch.as_tensor(mat, dtype=features.dtype, device=features.device)
    return torch.einsum("ij,...jw->...iw", op, features)


def align_to_reference(frames: list, ref_index: int | None = None) -> list[ShiftEstimate]:
    """Vertical estimates for every 2-D map against the middle one."""
    ref_index = len(frames) // 2 if ref_index is None else ref_index
    ref = frames[ref_index]
    return [estimate_vertical_subpixel_shift(ref, f) for f in frames]


__all__ = [
    "DegenerateInputError",
    "ShiftEstimate",
    "align_to_reference",
    "bilinear_upsample2",
    "estimate_vertical_subpixel_shift",
    "fourier_upsample2",
    "phase_correlate",
    "vertical_warp_matrix",
    "warp_features",
]
