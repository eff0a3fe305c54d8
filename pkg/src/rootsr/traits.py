"""Root and root-hair traits from binary segmentation masks."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import label
from skimage.morphology import thin

from .imageops import as_image

EIGHT = np.ones((3, 3), dtype=bool)
MIN_AREA = 5
SQRT2 = math.sqrt(2.0)


def _binary(mask, name: str = "mask") -> np.ndarray:
    m = as_image(mask)
    if m.shape[2] != 1:
        raise ValueError(f"{name} must be single-channel")
    m = m[:, :, 0]
    if not np.all((m == 0) | (m == 1)):
        raise ValueError(f"{name} must be binary (values 0 or 1)")
    return m.astype(bool)


def label_instances(mask, min_area: int = MIN_AREA) -> list[np.ndarray]:
    """8-connected components as ``(n, 2)`` arrays of ``(row, col)``.

    Components smaller than ``min_area`` are dropped; the rest are ordered by
    their first pixel in raster order.
    """
    m = mask if isinstance(mask, np.ndarray) and mask.dtype == bool and mask.ndim == 2 else _binary(mask)
    labels, n = label(m, structure=EIGHT)
    comps = []
    for k in range(1, n + 1):
        coords = np.argwhere(labels == k)  # raster order
        if len(coords) >= min_area:
            comps.append(coords)
    comps.sort(key=lambda c: (int(c[0, 0]), int(c[0, 1])))
    return comps


def _component_mask(coords: np.ndarray) -> np.ndarray:
    coords = np.asarray(coords)
    lo = coords.min(axis=0)
    shape = coords.max(axis=0) - lo + 3  # one pixel of padding on each side
    m = np.zeros(shape, dtype=bool)
    m[coords[:, 0] - lo[0] + 1, coords[:, 1] - lo[1] + 1] = True
    return m


def skeleton_edges_length(skel: np.ndarray) -> float:
    """Sum of skeleton graph edges: 1 per 4-neighbour pair, sqrt(2) per diagonal pair.

    A diagonal pair that is already joined through a shared 4-neighbour is
    not counted, so staircase corners are not measured twice.
    """
    s = np.pad(skel.astype(bool), 1)
    c = s[1:-1, 1:-1]
    right = c & s[1:-1, 2:]
    down = c & s[2:, 1:-1]
    # diagonal to down-right: corners are right and down neighbours
    dr = c & s[2:, 2:] & ~s[1:-1, 2:] & ~s[2:, 1:-1]
    # diagonal to down-left: corners are left and down neighbours
    dl = c & s[2:, :-2] & ~s[1:-1, :-2] & ~s[2:, 1:-1]
    return float(right.sum() + down.sum()) + SQRT2 * float(dr.sum() + dl.sum())


def skeleton_length(component) -> float:
    """Length in pixels of the thinned component (a single pixel measures 0)."""
    comp = np.asarray(component)
    m = comp if comp.dtype == bool and comp.ndim == 2 else _component_mask(comp)
    if not m.any():
        raise ValueError("empty component")
    return skeleton_edges_length(thin(m))


@dataclass
class TraitReport:
    root_count: int
    hair_count: int
    total_hair_length_mm: float
    avg_hair_length_mm: float
    avg_hair_area_mm2: float
    mm_per_px: float
    per_hair: list[dict] = field(default_factory=list)
    empty: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def analyze(root_mask, hair_mask, mm_per_px: float = 0.01, min_area: int = MIN_AREA) -> TraitReport:
    """Count roots and hairs and measure hair length/area in physical units.

    Hairs are the components of ``hair_mask`` after removing root pixels.
    """
    if not mm_per_px > 0:
        raise ValueError("mm_per_px must be > 0")
    root = _binary(root_mask, "root_mask")
    hair = _binary(hair_mask, "hair_mask")
    if root.shape != hair.shape:
        raise ValueError(f"mask shapes differ: {root.shape} vs {hair.shape}")
    roots = label_instances(root, min_area)
    hairs = label_instances(hair & ~root, min_area)
    per_hair = [
        {"length_px": skeleton_length(c), "area_px": int(len(c)), "first_pixel": [int(c[0, 0]), int(c[0, 1])]}
        for c in hairs
    ]
    n = len(per_hair)
    total_len = sum(h["length_px"] for h in per_hair) * mm_per_px
    total_area = sum(h["area_px"] for h in per_hair) * mm_per_px**2
    return TraitReport(
        root_count=len(roots),
        hair_count=n,
        total_hair_length_mm=total_len,
        avg_hair_length_mm=total_len / n if n else 0.0,
        avg_hair_area_mm2=total_area / n if n else 0.0,
        mm_per_px=mm_per_px,
        per_hair=per_hair,
        empty=n == 0,
    )


def format_trait_table(reports: dict[str, TraitReport]) -> str:
    """Rows are traits, one column per named report."""
    names = list(reports)
    rows = [
        ("Root Count", lambda r: f"{r.root_count}"),
        ("Root Hair Count", lambda r: f"{r.hair_count}"),
        ("Total Root Hair Length (mm)", lambda r: f"{r.total_hair_length_mm:.2f}"),
        ("Average Root Hair Length (mm)", lambda r: f"{r.avg_hair_length_mm:.2f}"),
        ("Average Root Hair Area (mm^2)", lambda r: f"{r.avg_hair_area_mm2:.4f}"),
    ]
    table = [["Root Trait"] + names] + [[label_] + [fn(reports[n]) for n in names] for label_, fn in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(table[0]))]
    lines = [" | ".join(c.ljust(w) for c, w in zip(r, widths)) for r in table]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines)
