"""Full-reference quality metrics and dataset-level reports.

All metrics work on the 255 scale; inputs are ``[0, 1]`` images.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .brisque import BrisqueModelError, brisque_features, load_model
from .errors import DegenerateInputError
from .imageops import as_image, read_png, to_grayscale

log = logging.getLogger(__name__)

PEAK = 255.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    d = PEAK * a - PEAK * b
    return float(np.mean(d * d))


def psnr(a, b) -> float:
    """PSNR in dB; ``math.inf`` for identical images."""
    m = mse(a, b)
    if m == 0:
        return math.inf
    return 10.0 * math.log10(PEAK * PEAK / m)


def gaussian_kernel1d(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    rows = sliding_window_view(x, g.size, axis=0) @ g
    return sliding_window_view(rows, g.size, axis=1) @ g


def ssim(a, b) -> float:
    """Single-scale SSIM (11x11 Gaussian, sigma 1.5) averaged over valid window positions."""
    a, b = _pair(a, b)
    if a.shape[0] < SSIM_WIN or a.shape[1] < SSIM_WIN:
        raise ValueError(f"SSIM needs images of at least {SSIM_WIN}x{SSIM_WIN}")
    x = to_grayscale(a)[:, :, 0] * PEAK
    y = to_grayscale(b)[:, :, 0] * PEAK
    g = gaussian_kernel1d()
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    c1, c2 = (K1 * PEAK) ** 2, (K2 * PEAK) ** 2
    smap = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(np.mean(smap))


# --- dataset evaluation ---------------------------------------------------


@dataclass
class QualityReport:
    rows: list[dict]
    has_reference: bool
    mean_mse: Optional[float] = None
    mean_psnr_db: Optional[float] = None
    mean_ssim: Optional[float] = None
    mean_brisque: Optional[float] = None
    n_images: int = 0
    n_psnr_inf: int = 0
    warnings: list[str] = field(default_factory=list)
    name: str = ""

    @property
    def columns(self) -> list[str]:
        cols = ["mse", "psnr_db", "ssim"] if self.has_reference else []
        return cols + ["brisque", "clip_iqa"]

    def to_dict(self) -> dict:
        def _num(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v

        return {
            "name": self.name,
            "has_reference": self.has_reference,
            "columns": self.columns,
            "n_images": self.n_images,
            "n_psnr_inf": self.n_psnr_inf,
            "mean": {c: _num(getattr(self, f"mean_{c}", None)) for c in self.columns if c != "clip_iqa"} | {"clip_iqa": None},
            "rows": [{k: _num(v) for k, v in r.items()} for r in self.rows],
            "warnings": self.warnings,
        }

    def to_table(self) -> str:
        return format_table([self])


def _fmt(v, digits: int) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, float) and math.isinf(v):
        return "inf"
    return f"{v:.{digits}f}"


def format_table(reports: list[QualityReport]) -> str:
    """One row per report, Table-I style (MSE, PSNR, SSIM, BRISQUE, CLIP-IQA)."""
    has_ref = any(r.has_reference for r in reports)
    head = ["Framework"] + (["MSE", "PSNR", "SSIM"] if has_ref else []) + ["BRISQUE", "CLIP-IQA"]
    lines = []
    for r in reports:
        cells = [r.name or "-"]
        if has_ref:
            cells += [_fmt(r.mean_mse, 2), _fmt(r.mean_psnr_db, 2), _fmt(r.mean_ssim, 4)]
        cells += [_fmt(r.mean_brisque, 2), "n/a"]
        lines.append(cells)
    widths = [max(len(x) for x in col) for col in zip(head, *lines)]
    out = [" | ".join(h.ljust(w) for h, w in zip(head, widths)), "-+-".join("-" * w for w in widths)]
    out += [" | ".join(c.ljust(w) for c, w in zip(cells, widths)) for cells in lines]
    return "\n".join(out)


def _pngs(directory) -> list[str]:
    return sorted(n for n in os.listdir(directory) if n.lower().endswith(".png"))


def evaluate_images(pairs, model_file=None, name: str = "") -> QualityReport:
    """Score ``(filename, output, reference_or_None)`` triples."""
    warnings = []
    model = None
    if model_file is not None:
        try:
            model = load_model(model_file)
        except BrisqueModelError as exc:
            warnings.append(f"BRISQUE unavailable: {exc}")
            log.warning("BRISQUE unavailable: %s", exc)
    pairs = list(pairs)
    has_ref = bool(pairs) and all(ref is not None for _, _, ref in pairs)
    rows = []
    for fname, out, ref in pairs:
        row: dict = {"file": fname}
        if has_ref:
            row["mse"] = mse(out, ref)
            row["psnr_db"] = psnr(out, ref)
            row["ssim"] = ssim(out, ref)
        row["brisque"] = None
        if model is not None:
            try:
                row["brisque"] = model.predict(brisque_features(out))
            except DegenerateInputError as exc:
                warnings.append(f"{fname}: BRISQUE skipped ({exc})")
        row["clip_iqa"] = None
        rows.append(row)

    report = QualityReport(rows=rows, has_reference=has_ref, n_images=len(rows), warnings=warnings, name=name)
    if has_ref and rows:
        report.mean_mse = float(np.mean([r["mse"] for r in rows]))
        finite = [r["psnr_db"] for r in rows if math.isfinite(r["psnr_db"])]
        report.n_psnr_inf = len(rows) - len(finite)
        if report.n_psnr_inf:
            warnings.append(f"{report.n_psnr_inf} image(s) with infinite PSNR excluded from the mean")
        report.mean_psnr_db = float(np.mean(finite)) if finite else math.inf
        report.mean_ssim = float(np.mean([r["ssim"] for r in rows]))
    scored = [r["brisque"] for r in rows if r["brisque"] is not None]
    report.mean_brisque = float(np.mean(scored)) if scored else None
    return report


def evaluate_dataset(outputs_dir, refs_dir=None, model_file=None, report_path=None, name: str = "") -> QualityReport:
    """Compare every PNG in ``outputs_dir`` with its same-named reference.

    Without ``refs_dir`` only no-reference columns are produced. Files without
    a counterpart are skipped and listed in ``warnings``.
    """
    outputs = _pngs(outputs_dir)
    warnings = []
    triples = []
    if refs_dir is not None:
        refs = set(_pngs(refs_dir))
        for n in sorted(refs - set(outputs)):
            warnings.append(f"reference without output: {n}")
        for n in outputs:
            if n not in refs:
                warnings.append(f"output without reference: {n}")
                continue
            triples.append((n, read_png(os.path.join(outputs_dir, n)), read_png(os.path.join(refs_dir, n))))
    else:
        triples = [(n, read_png(os.path.join(outputs_dir, n)), None) for n in outputs]
    report = evaluate_images(triples, model_file=model_file, name=name or os.path.basename(os.path.normpath(outputs_dir)))
    report.has_reference = refs_dir is not None
    report.warnings = warnings + report.warnings
    for w in warnings:
        log.warning(w)
    if report_path is not None:
        with open(report_path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
    return report
