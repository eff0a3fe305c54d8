"""BRISQUE natural-scene statistics and an SVR scorer driven by a JSON model.

Feature layout (per scale, 18 values; scale 0 then scale 1 at half size)::

    0  ggd_alpha      1  ggd_var
    2+4k .. 5+4k      aggd alpha, mean_eta, var_left, var_right
                      for k = 0..3 over pair orientations H, V, D1, D2

Model file schema (JSON)::

    {"version": 1, "kernel": "rbf", "gamma": float, "bias": float,
     "feature_min": [36], "feature_max": [36],
     "support_vectors": [[36], ...], "coefficients": [...]}

Support vectors live in the scaled feature space ([-1, 1] per feature);
score = sum_i coef_i * exp(-gamma * |sv_i - x|^2) + bias.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate
from scipy.special import gamma as gamma_fn

from .errors import DegenerateInputError
from .imageops import as_image, resize, to_grayscale

ALPHA_GRID = np.arange(0.2, 10.0 + 5e-4, 1e-3)
# GGD: E[x^2] / E|x|^2 as a function of shape; AGGD: its reciprocal
_GGD_RATIO = gamma_fn(1 / ALPHA_GRID) * gamma_fn(3 / ALPHA_GRID) / gamma_fn(2 / ALPHA_GRID) ** 2
_AGGD_RATIO = 1.0 / _GGD_RATIO

MSCN_C = 1.0
MIN_SAMPLES = 64
PAIRS = ("H", "V", "D1", "D2")
FEATURES_PER_SCALE = 18
MODEL_VERSION = 1


class BrisqueModelError(RuntimeError):
    """Model file missing or not matching the documented schema."""


@dataclass(frozen=True)
class AggdFit:
    alpha: float
    sigma_l: float
    sigma_r: float
    mean_eta: float


def _check_samples(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size < MIN_SAMPLES:
        raise DegenerateInputError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)) or np.ptp(x) == 0:
        raise DegenerateInputError("samples are constant or non-finite")
    return x


def ggd_fit(x) -> tuple[float, float]:
    """Symmetric generalized Gaussian fit by moment matching; returns ``(alpha, variance)``."""
    x = _check_samples(x)
    var = float(np.mean(x * x))
    rho = var / float(np.mean(np.abs(x))) ** 2
    alpha = float(ALPHA_GRID[np.argmin(np.abs(rho - _GGD_RATIO))])
    return alpha, var


def aggd_fit(x) -> AggdFit:
    x = _check_samples(x)
    left, right = x[x < 0], x[x > 0]
    if left.size == 0 or right.size == 0:
        raise DegenerateInputError("AGGD fit needs samples on both sides of zero")
    sigma_l = float(np.sqrt(np.mean(left * left)))
    sigma_r = float(np.sqrt(np.mean(right * right)))
    g = sigma_l / sigma_r
    r_hat = float(np.mean(np.abs(x))) ** 2 / float(np.mean(x * x))
    r_norm = r_hat * (g**3 + 1) * (g + 1) / (g**2 + 1) ** 2
    alpha = float(ALPHA_GRID[np.argmin((_AGGD_RATIO - r_norm) ** 2)])
    eta = (sigma_r - sigma_l) * gamma_fn(2 / alpha) / gamma_fn(1 / alpha) * np.sqrt(gamma_fn(1 / alpha) / gamma_fn(3 / alpha))
    return AggdFit(alpha, sigma_l, sigma_r, float(eta))


def _gaussian_window(size: int = 7, sigma: float = 7 / 6) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def mscn(gray255: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalised coefficients of a 2-D map on the 255 scale."""
    win = _gaussian_window()
    mu = correlate(gray255, win, mode="reflect")
    var = correlate(gray255 * gray255, win, mode="reflect") - mu * mu
    return (gray255 - mu) / (np.sqrt(np.abs(var)) + MSCN_C)


def pair_products(m: np.ndarray) -> dict[str, np.ndarray]:
    return {
        "H": m[:, :-1] * m[:, 1:],
        "V": m[:-1, :] * m[1:, :],
        "D1": m[:-1, :-1] * m[1:, 1:],
        "D2": m[:-1, 1:] * m[1:, :-1],
    }


def _scale_features(gray255: np.ndarray) -> list[float]:
    m = mscn(gray255)
    alpha, var = ggd_fit(m)
    feats = [alpha, var]
    for prods in pair_products(m).values():
        fit = aggd_fit(prods)
        feats += [fit.alpha, fit.mean_eta, fit.sigma_l**2, fit.sigma_r**2]
    return feats


def brisque_features(img) -> np.ndarray:
    gray = to_grayscale(as_image(img))
    h, w = gray.shape[:2]
    if h < 32 or w < 32:
        raise ValueError(f"image must be at least 32x32, got {h}x{w}")
    if np.ptp(gray) == 0:
        raise DegenerateInputError("constant image has no natural-scene statistics")
    full = gray[:, :, 0] * 255.0
    even = gray[: h - h % 2, : w - w % 2]
    half = resize(even, even.shape[0] // 2, even.shape[1] // 2, "area")[:, :, 0] * 255.0
    return np.array(_scale_features(full) + _scale_features(half))


def flip_permutation(kind: str) -> np.ndarray:
    """Index permutation ``p`` with ``features(flip(img)) == features(img)[p]``.

    ``kind`` is ``"lr"``/``"ud"`` (mirror: D1 and D2 swap) or ``"transpose"``
    (H and V swap).
    """
    swap = {"lr": ("D1", "D2"), "ud": ("D1", "D2"), "transpose": ("H", "V")}[kind]
    order = list(PAIRS)
    i, j = order.index(swap[0]), order.index(swap[1])
    order[i], order[j] = order[j], order[i]
    per_scale = [0, 1]
    for name in order:
        k = PAIRS.index(name)
        per_scale += [2 + 4 * k + t for t in range(4)]
    return np.array(per_scale + [FEATURES_PER_SCALE + p for p in per_scale])


# --- SVR scoring ----------------------------------------------------------


@dataclass
class SvrModel:
    gamma: float
    bias: float
    feature_min: np.ndarray
    feature_max: np.ndarray
    support_vectors: np.ndarray
    coefficients: np.ndarray

    def scale(self, features) -> np.ndarray:
        f = np.asarray(features, dtype=np.float64)
        span = self.feature_max - self.feature_min
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, -1.0 + 2.0 * (f - self.feature_min) / safe, 0.0)

    def predict(self, features) -> float:
        x = self.scale(features)
        if self.support_vectors.size == 0:
            return float(self.bias)
        d2 = np.sum((self.support_vectors - x) ** 2, axis=1)
        return float(self.coefficients @ np.exp(-self.gamma * d2) + self.bias)

    def to_dict(self) -> dict:
        return {
            "version": MODEL_VERSION,
            "kernel": "rbf",
            "gamma": self.gamma,
            "bias": self.bias,
            "feature_min": self.feature_min.tolist(),
            "feature_max": self.feature_max.tolist(),
            "support_vectors": self.support_vectors.tolist(),
            "coefficients": self.coefficients.tolist(),
        }


def load_model(model_file) -> SvrModel:
    if model_file is None or not os.path.exists(model_file):
        raise BrisqueModelError(f"BRISQUE model file not found: {model_file}")
    try:
        with open(model_file) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise BrisqueModelError(f"cannot read BRISQUE model {model_file}: {exc}") from exc
    try:
        if d["version"] != MODEL_VERSION:
            raise BrisqueModelError(f"unsupported model version {d['version']!r}")
        if d.get("kernel", "rbf") != "rbf":
            raise BrisqueModelError(f"unsupported kernel {d['kernel']!r}")
        n_feat = 2 * FEATURES_PER_SCALE
        fmin = np.asarray(d["feature_min"], dtype=np.float64)
        fmax = np.asarray(d["feature_max"], dtype=np.float64)
        sv = np.asarray(d["support_vectors"], dtype=np.float64).reshape(-1, n_feat)
        coef = np.asarray(d["coefficients"], dtype=np.float64)
        model = SvrModel(float(d["gamma"]), float(d["bias"]), fmin, fmax, sv, coef)
    except (KeyError, TypeError, ValueError) as exc:
        raise BrisqueModelError(f"invalid BRISQUE model {model_file}: {exc}") from exc
    if fmin.shape != (n_feat,) or fmax.shape != (n_feat,) or coef.shape != (sv.shape[0],):
        raise BrisqueModelError("model arrays have inconsistent shapes")
    return model


def brisque_score(features, model_file) -> float:
    model = model_file if isinstance(model_file, SvrModel) else load_model(model_file)
    return model.predict(features)
