"""Procedural synthetic root scenes with instance masks and ground truth.

A scene is a soil-like value-noise background with a bright main root drawn
along a smooth vertical curve and thin straight root hairs attached to the
root edge. Every hair is rasterised into its own binary mask, so downstream
trait analysis can be checked against exact truth.

Randomness: ``SeedSequence(seed)`` is spawned into three independent streams,
consumed in this order:

1. background: base-colour jitter (3 uniforms), then one uniform grid per
   noise octave, coarse to fine;
2. geometry: start column, 7 lateral steps, hair count, then per hair its
   arc position, side, angle jitter and length (lengths by rejection);
3. placement: angle/length redraws for hairs rejected at placement time.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import binary_dilation, label
from scipy.spatial import cKDTree

from .imageops import read_png, sampling_matrix, write_png

SOIL_RGB = np.array([0.36, 0.27, 0.19])
SOIL_TINT = np.array([1.0, 0.9, 0.75])
ROOT_RGB = np.array([0.93, 0.91, 0.84])
HAIR_RGB = np.array([0.86, 0.84, 0.76])

N_CONTROL = 8
N_OCTAVES = 4
NOISE_CONTRAST = 0.15
ANGLE_JITTER_DEG = 25.0
MIN_HAIR_LEN = 3.0
MAX_REDRAWS = 10
MIN_HAIR_AREA = 5
MAX_ROOT_OVERLAP = 0.05  # fraction of a hair strip allowed under the root body
EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class SceneParams:
    height: int = 160
    width: int = 160
    root_width_px: float = 10.0
    hair_rate: float = 8.0
    hair_len_mean_px: float = 40.0
    hair_len_std_px: float = 6.0
    hair_width_px: float = 1.5
    bg_roughness: float = 0.5
    illum_gradient: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.height < 64 or self.width < 64:
            raise ValueError("scene dims must be >= 64")
        if self.root_width_px < 2:
            raise ValueError("root_width_px must be >= 2")
        if self.hair_rate < 0:
            raise ValueError("hair_rate must be >= 0")
        if self.hair_len_mean_px <= 0 or self.hair_len_std_px < 0:
            raise ValueError("hair length mean must be > 0 and std >= 0")
        if self.hair_width_px <= 0:
            raise ValueError("hair_width_px must be > 0")
        if not 0.0 <= self.bg_roughness <= 1.0:
            raise ValueError("bg_roughness must be in [0, 1]")
        if not 0.0 <= self.illum_gradient <= 0.5:
            raise ValueError("illum_gradient must be in [0, 0.5]")


@dataclass
class HairRecord:
    anchor_y: float
    anchor_x: float
    angle: float  # radians, direction of growth in (y, x) image coordinates
    length: float
    width: float

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.sin(self.angle), math.cos(self.angle)])


@dataclass
class RootGeometry:
    centerline: np.ndarray  # (M, 2) points (y, x), top to bottom
    hairs: list[HairRecord]
    # per hair: outward normal angle at its anchor, used for redraws
    normal_angles: list[float] = field(default_factory=list)

    @property
    def length(self) -> float:
        return float(np.sum(np.hypot(*np.diff(self.centerline, axis=0).T)))


@dataclass
class TraitTruth:
    hair_count: int
    hair_lengths_px: list[float]
    hair_areas_px: list[float]


@dataclass
class RootScene:
    image: np.ndarray
    root_mask: np.ndarray
    hair_masks: list[np.ndarray]
    truth: TraitTruth
    params: SceneParams


def _streams(seed: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _value_noise(rng: np.random.Generator, h: int, w: int, cell: float) -> np.ndarray:
    gh, gw = int(math.ceil(h / cell)) + 2, int(math.ceil(w / cell)) + 2
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw))
    my = sampling_matrix(gh, np.arange(h) / cell)
    mx = sampling_matrix(gw, np.arange(w) / cell)
    return my @ grid @ mx.T


def render_background(p: SceneParams) -> np.ndarray:
    """Soil texture: 4-octave value noise plus a left-to-right illumination tilt."""
    rng = _streams(p.seed)[0]
    h, w = p.height, p.width
    base = SOIL_RGB + rng.uniform(-0.04, 0.04, size=3)
    noise = np.zeros((h, w))
    cell = max(h, w) / 8.0
    for k in range(N_OCTAVES):
        octave = _value_noise(rng, h, w, cell / 2**k)
        noise += p.bg_roughness ** (k + 1) * octave
    tilt = p.illum_gradient * (np.arange(w) / (w - 1) - 0.5)
    img = base + NOISE_CONTRAST * noise[:, :, None] * SOIL_TINT + tilt[None, :, None]
    return np.clip(img, 0.0, 1.0)


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, lo: float, hi: float) -> float:
    if std == 0:
        return float(min(max(mean, lo), hi))
    while True:
        v = rng.normal(mean, std)
        if lo <= v <= hi:
            return float(v)


def _draw_hair_shape(rng, p: SceneParams, normal_angle: float) -> tuple[float, float]:
    jitter = math.radians(rng.uniform(-ANGLE_JITTER_DEG, ANGLE_JITTER_DEG))
    length = _truncated_normal(rng, p.hair_len_mean_px, p.hair_len_std_px, MIN_HAIR_LEN, 3 * p.hair_len_mean_px)
    return normal_angle + jitter, length


def sample_root_geometry(p: SceneParams) -> RootGeometry:
    rng = _streams(p.seed)[1]
    h, w = p.height, p.width
    margin = p.root_width_px + 2.0
    ys = np.linspace(0.0, h - 1.0, N_CONTROL)
    xs = np.empty(N_CONTROL)
    xs[0] = rng.uniform(0.35 * w, 0.65 * w)
    steps = rng.normal(0.0, w / 20.0, size=N_CONTROL - 1)
    for i, step in enumerate(steps, start=1):
        xs[i] = np.clip(xs[i - 1] + step, margin, w - 1 - margin)
    spline = CubicSpline(ys, xs)
    yd = np.linspace(0.0, h - 1.0, 4 * h + 1)
    xd = np.clip(spline(yd), margin / 2, w - 1 - margin / 2)
    centerline = np.stack([yd, xd], axis=1)

    seg = np.hypot(*np.diff(centerline, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(arc[-1])
    n_hairs = int(rng.poisson(p.hair_rate / 100.0 * total))
    hairs, normals = [], []
    for _ in range(n_hairs):
        s = rng.uniform(0.0, total)
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        i = int(min(np.searchsorted(arc, s, side="right") - 1, len(seg) - 1))
        frac = (s - arc[i]) / seg[i]
        point = centerline[i] + frac * (centerline[i + 1] - centerline[i])
        ty, tx = (centerline[i + 1] - centerline[i]) / seg[i]
        ny, nx = side * -tx, side * ty  # rotate tangent by +-90 degrees
        normal_angle = math.atan2(ny, nx)
        angle, length = _draw_hair_shape(rng, p, normal_angle)
        anchor = point + np.array([ny, nx]) * (p.root_width_px / 2.0)
        hairs.append(HairRecord(float(anchor[0]), float(anchor[1]), angle, length, p.hair_width_px))
        normals.append(normal_angle)
    return RootGeometry(centerline, hairs, normals)


def _hair_fields(rec: HairRecord, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel along-axis coordinate ``t`` and signed perpendicular offset ``s``."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - rec.anchor_y, xx - rec.anchor_x
    uy, ux = rec.direction
    return dy * uy + dx * ux, -dy * ux + dx * uy


def rasterize_hair(rec: HairRecord, h: int, w: int) -> np.ndarray:
    """Pixels whose centre falls inside the hair's flat-ended strip."""
    t, s = _hair_fields(rec, h, w)
    return (t >= 0.0) & (t <= rec.length) & (np.abs(s) <= rec.width / 2.0)


def _hair_alpha(rec: HairRecord, h: int, w: int) -> np.ndarray:
    t, s = _hair_fields(rec, h, w)
    dt = np.maximum(np.maximum(-t, t - rec.length), 0.0)
    ds = np.maximum(np.abs(s) - rec.width / 2.0, 0.0)
    return np.exp(-(dt**2 + ds**2) / (2 * 0.5**2))


def _inside(rec: HairRecord, h: int, w: int) -> bool:
    base = np.array([rec.anchor_y, rec.anchor_x])
    pad = rec.width
    return all(
        pad <= y <= h - 1 - pad and pad <= x <= w - 1 - pad
        for y, x in (base, base + rec.length * rec.direction)
    )


def generate_scene(p: SceneParams) -> RootScene:
    """Render background, root and hairs; build instance masks and truth.

    A hair is redrawn (new angle and length, same anchor) when it leaves the
    frame, touches an already placed hair, runs more than
    ``MAX_ROOT_OVERLAP`` of its strip under the root, or does not rasterise
    into one connected component of at least ``MIN_HAIR_AREA`` pixels. After
    ``MAX_REDRAWS`` failures it is dropped.
    """
    h, w = p.height, p.width
    img = render_background(p)
    geom = sample_root_geometry(p)
    rng = _streams(p.seed)[2]

    yy, xx = np.mgrid[0:h, 0:w]
    pix = np.stack([yy.ravel(), xx.ravel()], axis=1).astype(np.float64)
    dist, _ = cKDTree(geom.centerline).query(pix)
    dist = dist.reshape(h, w)
    radius = p.root_width_px / 2.0
    root_mask = dist <= radius

    occupied = np.zeros((h, w), dtype=bool)  # placed hairs, dilated by one pixel
    hair_masks, lengths, areas, placed = [], [], [], []
    for rec, normal_angle in zip(geom.hairs, geom.normal_angles):
        for attempt in range(MAX_REDRAWS + 1):
            if attempt:
                rec.angle, rec.length = _draw_hair_shape(rng, p, normal_angle)
            if not _inside(rec, h, w):
                continue
            strip = rasterize_hair(rec, h, w)
            mask = strip & ~root_mask
            if mask.sum() < MIN_HAIR_AREA or (mask & occupied).any():
                continue
            if (strip & root_mask).sum() > MAX_ROOT_OVERLAP * strip.sum():
                continue
            if label(mask, structure=EIGHT)[1] != 1:
                continue
            break
        else:
            continue
        occupied |= binary_dilation(mask, structure=EIGHT)
        hair_masks.append(mask)
        lengths.append(float(rec.length))
        areas.append(float(mask.sum()))
        placed.append(rec)

    # shading: cylinder-like cross profile inside the root, Gaussian falloff outside
    inner = np.sqrt(np.clip(1.0 - (dist / radius) ** 2, 0.0, 1.0))
    root_alpha = np.where(root_mask, 1.0, np.exp(-((dist - radius) ** 2) / (2 * 1.0**2)))
    root_rgb = ROOT_RGB[None, None, :] * (0.85 + 0.15 * inner)[:, :, None]
    for rec in placed:
        a = _hair_alpha(rec, h, w)[:, :, None]
        img = img * (1 - a) + HAIR_RGB * a
    ra = root_alpha[:, :, None]
    img = np.clip(img * (1 - ra) + root_rgb * ra, 0.0, 1.0)

    truth = TraitTruth(len(hair_masks), lengths, areas)
    return RootScene(
        image=img,
        root_mask=root_mask.astype(np.float64)[:, :, None],
        hair_masks=[m.astype(np.float64)[:, :, None] for m in hair_masks],
        truth=truth,
        params=p,
    )


def root_center_column(scene: RootScene, row: int) -> int:
    cols = np.flatnonzero(scene.root_mask[row, :, 0] > 0.5)
    if cols.size == 0:
        return scene.image.shape[1] // 2
    return int(round(cols.mean()))


def export_scene(scene: RootScene, directory: os.PathLike | str) -> None:
    """Write ``image.png``, ``root_mask.png``, ``hair_<k>.png`` and ``scene.json``."""
    os.makedirs(directory, exist_ok=True)
    write_png(os.path.join(directory, "image.png"), scene.image)
    write_png(os.path.join(directory, "root_mask.png"), scene.root_mask)
    for k, m in enumerate(scene.hair_masks):
        write_png(os.path.join(directory, f"hair_{k}.png"), m)
    with open(os.path.join(directory, "scene.json"), "w") as fh:
        json.dump({"params": asdict(scene.params), "truth": asdict(scene.truth)}, fh, indent=2)


def load_scene(directory: os.PathLike | str) -> RootScene:
    """Inverse of :func:`export_scene` (the image comes back 8-bit quantized)."""
    with open(os.path.join(directory, "scene.json")) as fh:
        meta = json.load(fh)
    truth = TraitTruth(**meta["truth"])
    hairs = [read_png(os.path.join(directory, f"hair_{k}.png")) for k in range(truth.hair_count)]
    return RootScene(
        image=read_png(os.path.join(directory, "image.png")),
        root_mask=read_png(os.path.join(directory, "root_mask.png")),
        hair_masks=hairs,
        truth=truth,
        params=SceneParams(**meta["params"]),
    )
