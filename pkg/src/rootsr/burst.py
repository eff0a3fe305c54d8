"""LR bursts with exact half-pixel vertical shifts, and their on-disk datasets.

Dataset layout::

    <dir>/manifest.jsonl
    <dir>/samples/<id>/hr.png, lr_0.png ... lr_{N-1}.png,
                       root_mask.png, hair_<k>.png, truth.json, meta.json

Shifts are stored as exact decimal strings so they survive JSON bit-exactly.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime
from decimal import Decimal
from typing import Iterable, Optional, Sequence

import numpy as np

from .imageops import Rect, crop, read_png, resize, write_png
from .synthgen import SceneParams, TraitTruth, generate_scene, root_center_column

SCALE = 2
DEFAULT_OFFSETS = (-3, 0, 3)
MANIFEST = "manifest.jsonl"


class DatasetError(RuntimeError):
    pass


class IngestError(DatasetError):
    pass


@dataclass
class CaptureMeta:
    depth_mm: float
    rotation_step: int
    acquired_at: datetime
    mm_per_px: float = 0.01

    def __post_init__(self):
        if not self.mm_per_px > 0:
            raise ValueError("mm_per_px must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["acquired_at"] = self.acquired_at.isoformat()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaptureMeta":
        missing = [k for k in ("depth_mm", "rotation_step", "acquired_at", "mm_per_px") if k not in d]
        if missing:
            raise IngestError(f"metadata missing fields: {', '.join(missing)}")
        return cls(
            depth_mm=float(d["depth_mm"]),
            rotation_step=int(d["rotation_step"]),
            acquired_at=datetime.fromisoformat(str(d["acquired_at"])),
            mm_per_px=float(d["mm_per_px"]),
        )


@dataclass
class BurstSample:
    frames: list[np.ndarray]
    hr_target: Optional[np.ndarray] = None
    true_shifts_lr: Optional[list[float]] = None  # None: unknown (real captures)
    meta: Optional[CaptureMeta] = None
    sample_id: str = ""
    split: str = "train"
    root_mask: Optional[np.ndarray] = None
    hair_masks: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.frames)
        if n < 2 or n % 2 == 0:
            raise ValueError(f"a burst needs an odd number (>= 3) of frames, got {n}")
        if self.true_shifts_lr is not None:
            if len(self.true_shifts_lr) != n:
                raise ValueError("one true shift per frame required")
            if self.true_shifts_lr[self.reference_index] != 0:
                raise ValueError("reference frame shift must be 0")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def reference_index(self) -> int:
        return len(self.frames) // 2

    @property
    def shifts_known(self) -> bool:
        return self.true_shifts_lr is not None


def check_offsets(hr_offsets: Sequence[int]) -> None:
    n = len(hr_offsets)
    if n < 3 or n % 2 == 0:
        raise ValueError(f"need an odd number (>= 3) of offsets, got {n}")
    mid = n // 2
    if hr_offsets[mid] != 0:
        raise ValueError("the middle (reference) offset must be 0")
    for i, off in enumerate(hr_offsets):
        if int(off) != off:
            raise ValueError(f"offset {off!r} is not an integer")
        if i != mid and off % 2 == 0:
            raise ValueError(f"offset {off} violates the odd number of pixels rule")


def synthesize_burst(scene_img: np.ndarray, window: Rect, hr_offsets: Sequence[int] = DEFAULT_OFFSETS) -> BurstSample:
    """Crop ``window`` (shifted down by each offset) and area-downscale by 2.

    An odd HR offset becomes a shift with fractional part exactly 0.5 on the
    LR grid; frame ``i`` satisfies ``translate(frame_i, shift_i) ~= reference``.
    """
    check_offsets(hr_offsets)
    if window.height % SCALE or window.width % SCALE:
        raise ValueError("window dimensions must be even")
    hr_target = crop(scene_img, window)
    frames = []
    for off in hr_offsets:
        src = crop(scene_img, window.shifted(dy=int(off)))
        frames.append(resize(src, window.height // SCALE, window.width // SCALE, "area"))
    shifts = [int(off) / SCALE for off in hr_offsets]
    return BurstSample(frames=frames, hr_target=hr_target, true_shifts_lr=shifts)


def random_odd_offsets(rng: np.random.Generator, n_frames: int = 3, max_abs: int = 5) -> list[int]:
    """Reference 0 in the middle; every other offset a random odd value in ``[-max_abs, max_abs]``."""
    odd = np.arange(1, max_abs + 1, 2)
    offs = [int(rng.choice(odd)) * (1 if rng.uniform() < 0.5 else -1) for _ in range(n_frames)]
    offs[n_frames // 2] = 0
    return offs


def centered_window(scene_shape: tuple[int, int], size: int, root_col: int, max_offset: int) -> Rect:
    h, w = scene_shape
    if size + 2 * max_offset > h or size > w:
        raise ValueError(f"scene {h}x{w} too small for window {size} with offsets up to {max_offset}")
    top = (h - size) // 2
    left = int(np.clip(root_col - size // 2, 0, w - size))
    return Rect(top, left, size, size)


def sample_scene_params(rng: np.random.Generator, scene_size: int = 160, vary: bool = True) -> SceneParams:
    """Scene parameters for one dataset entry; ``vary`` spreads root width, hair density and texture."""
    params = SceneParams(height=scene_size, width=scene_size, seed=int(rng.integers(2**31)))
    if vary:
        params.root_width_px = float(rng.uniform(6.0, 14.0))
        params.hair_rate = float(rng.uniform(4.0, 12.0))
        params.bg_roughness = float(rng.uniform(0.3, 0.7))
        params.illum_gradient = float(rng.uniform(0.0, 0.2))
    return params


def make_synthetic_samples(
    n: int,
    seed: int = 0,
    window: int = 128,
    scene_size: int = 160,
    offsets: Sequence[int] | str = DEFAULT_OFFSETS,
    n_frames: int = 3,
    max_offset: int = 5,
    vary_params: bool = True,
    with_masks: bool = True,
) -> list[tuple[BurstSample, TraitTruth]]:
    """Generate ``n`` scenes and one burst per scene.

    ``offsets="random"`` draws fresh odd offsets per sample; otherwise the
    given tuple is used for every sample.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        params = sample_scene_params(rng, scene_size, vary_params)
        offs = random_odd_offsets(rng, n_frames, max_offset) if offsets == "random" else list(offsets)
        scene = generate_scene(params)
        out.append((burst_from_scene(scene, window, offs, f"s{i:05d}", with_masks), scene.truth))
    return out


def burst_from_scene(scene, window: int, offsets: Sequence[int], sample_id: str = "", with_masks: bool = True) -> BurstSample:
    """Crop a ``window``-sized burst around the root, centred on the scene's middle row."""
    size_h, size_w = scene.image.shape[:2]
    reach = max(abs(o) for o in offsets)
    win = centered_window((size_h, size_w), window, root_center_column(scene, size_h // 2), reach)
    sample = synthesize_burst(scene.image, win, offsets)
    sample.sample_id = sample_id
    if with_masks:
        sample.root_mask = crop(scene.root_mask, win)
        sample.hair_masks = [crop(m, win) for m in scene.hair_masks]
    return sample


def assign_splits(samples: Iterable[BurstSample], val_fraction: float) -> None:
    samples = list(samples)
    n_val = int(round(len(samples) * val_fraction))
    for i, s in enumerate(samples):
        s.split = "val" if i >= len(samples) - n_val else "train"


# --- persistence ----------------------------------------------------------


def _shift_str(v: float) -> str:
    return str(Decimal(float(v)))


def persist_dataset(samples: Sequence[BurstSample], directory, truths: Optional[Sequence[Optional[TraitTruth]]] = None) -> list[dict]:
    """Write PNG payloads plus ``manifest.jsonl``; returns the manifest records."""
    if truths is not None and len(truths) != len(samples):
        raise ValueError("truths must align with samples")
    ids = [s.sample_id for s in samples]
    if len(set(ids)) != len(ids) or any(not i for i in ids):
        raise DatasetError("sample_ids must be non-empty and unique")
    os.makedirs(os.path.join(directory, "samples"), exist_ok=True)
    records = []
    for k, s in enumerate(samples):
        rel = os.path.join("samples", s.sample_id)
        sdir = os.path.join(directory, rel)
        os.makedirs(sdir, exist_ok=True)
        rec = {"sample_id": s.sample_id, "split": s.split, "scale": SCALE, "frames": []}
        for i, f in enumerate(s.frames):
            write_png(os.path.join(sdir, f"lr_{i}.png"), f)
            rec["frames"].append(f"{rel}/lr_{i}.png")
        rec["hr"] = None
        if s.hr_target is not None:
            write_png(os.path.join(sdir, "hr.png"), s.hr_target)
            rec["hr"] = f"{rel}/hr.png"
        rec["root_mask"] = None
        if s.root_mask is not None:
            write_png(os.path.join(sdir, "root_mask.png"), s.root_mask)
            rec["root_mask"] = f"{rel}/root_mask.png"
        rec["hair_masks"] = []
        for j, m in enumerate(s.hair_masks):
            write_png(os.path.join(sdir, f"hair_{j}.png"), m)
            rec["hair_masks"].append(f"{rel}/hair_{j}.png")
        rec["true_shifts_lr"] = None if s.true_shifts_lr is None else [_shift_str(v) for v in s.true_shifts_lr]
        rec["truth"] = None
        if truths is not None and truths[k] is not None:
            with open(os.path.join(sdir, "truth.json"), "w") as fh:
                json.dump(asdict(truths[k]), fh)
            rec["truth"] = f"{rel}/truth.json"
        rec["meta"] = None
        if s.meta is not None:
            with open(os.path.join(sdir, "meta.json"), "w") as fh:
                json.dump(s.meta.to_dict(), fh)
            rec["meta"] = f"{rel}/meta.json"
        records.append(rec)
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return records


def read_manifest(directory) -> list[dict]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise DatasetError(f"no {MANIFEST} in {directory}")
    records, seen = [], set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                sid = rec["sample_id"]
                rec["frames"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{MANIFEST}:{lineno}: malformed record ({exc})") from exc
            if sid in seen:
                raise DatasetError(f"{MANIFEST}:{lineno}: duplicate sample_id {sid!r}")
            seen.add(sid)
            records.append(rec)
    return records


def load_dataset(directory, split: Optional[str] = None) -> tuple[list[BurstSample], list[Optional[TraitTruth]]]:
    samples, truths = [], []
    for rec in read_manifest(directory):
        if split is not None and rec.get("split") != split:
            continue
        sid = rec["sample_id"]

        def _path(rel):
            p = os.path.join(directory, rel)
            if not os.path.exists(p):
                raise DatasetError(f"sample {sid}: missing file {rel}")
            return p

        frames = [read_png(_path(p)) for p in rec["frames"]]
        hr = read_png(_path(rec["hr"])) if rec.get("hr") else None
        root = read_png(_path(rec["root_mask"])) if rec.get("root_mask") else None
        hairs = [read_png(_path(p)) for p in rec.get("hair_masks", [])]
        shifts = rec.get("true_shifts_lr")
        meta = None
        if rec.get("meta"):
            with open(_path(rec["meta"])) as fh:
                meta = CaptureMeta.from_dict(json.load(fh))
        truth = None
        if rec.get("truth"):
            with open(_path(rec["truth"])) as fh:
                truth = TraitTruth(**json.load(fh))
        samples.append(
            BurstSample(
                frames=frames,
                hr_target=hr,
                true_shifts_lr=None if shifts is None else [float(v) for v in shifts],
                meta=meta,
                sample_id=sid,
                split=rec.get("split", "train"),
                root_mask=root,
                hair_masks=hairs,
            )
        )
        truths.append(truth)
    return samples, truths


# --- real captures --------------------------------------------------------


def _natural_key(name: str):
    return [int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name)]


def _ingest_group(gdir: str) -> BurstSample:
    meta_path = os.path.join(gdir, "meta.json")
    if not os.path.exists(meta_path):
        raise IngestError(f"{gdir}: missing meta.json")
    with open(meta_path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IngestError(f"{gdir}: malformed meta.json ({exc})") from exc
    meta = CaptureMeta.from_dict(raw)
    names = raw.get("frames") or sorted((n for n in os.listdir(gdir) if n.lower().endswith(".png")), key=_natural_key)
    if len(names) < 3 or len(names) % 2 == 0:
        raise IngestError(f"{gdir}: need an odd number (>= 3) of frames, found {len(names)}")
    frames = [read_png(os.path.join(gdir, n)) for n in names]
    return BurstSample(frames=frames, meta=meta, sample_id=os.path.basename(os.path.normpath(gdir)), split="real")


def ingest_real_capture(directory) -> list[BurstSample]:
    """Load frame groups; each group is a folder with PNG frames and ``meta.json``.

    Frames are ordered by the optional ``frames`` list in the sidecar, else by
    natural filename order. A directory holding ``meta.json`` itself is one group.
    """
    if os.path.exists(os.path.join(directory, "meta.json")):
        return [_ingest_group(directory)]
    groups = sorted(
        (d for d in os.listdir(directory) if os.path.isdir(os.path.join(directory, d))),
        key=_natural_key,
    )
    if not groups:
        raise IngestError(f"{directory}: no frame groups found")
    return [_ingest_group(os.path.join(directory, g)) for g in groups]
