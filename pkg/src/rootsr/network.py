"""Multi-image dense-residual super-resolution network (MI-DRCT style).

Pipeline per burst of ``N`` LR frames::

    shared 3x3 conv (3 -> f) per frame
      -> align non-reference features to the middle frame (vertical, half-pixel)
      -> concat (N*f) -> 3x3 conv (N*f -> f)            = shallow
      -> deep extractor (dense-residual groups)          = deep
      -> concat(shallow, deep) -> 3x3 conv -> 3x3 conv (-> 4*3) -> pixel shuffle x2

The deep extractor is any module mapping ``(B, f, H, W)`` to the same shape;
:class:`DenseResidualExtractor` is the reference implementation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .align import DegenerateInputError, estimate_vertical_subpixel_shift, vertical_warp_matrix

log = logging.getLogger(__name__)


@dataclass
class NetworkConfig:
    n_frames: int = 3
    embed_dim: int = 16
    scale: int = 2
    rdg_count: int = 2
    blocks_per_group: int = 4
    growth: int = 8
    align_enabled: bool = True
    align_upsample: str = "fourier"
    seed: int = 0

    def __post_init__(self):
        if self.n_frames < 3 or self.n_frames % 2 == 0:
            raise ValueError("n_frames must be odd and >= 3")
        if self.embed_dim < 4:
            raise ValueError("embed_dim must be >= 4")
        if self.scale != 2:
            raise ValueError("only scale 2 is supported")
        if self.rdg_count < 1 or self.blocks_per_group < 1 or self.growth < 1:
            raise ValueError("rdg_count, blocks_per_group and growth must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def conv3x3(c_in: int, c_out: int) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, kernel_size=3, stride=1, padding=1)


class DenseResidualGroup(nn.Module):
    """Dense blocks (3x3 conv + GELU on all previous features), 1x1 compression, residual add."""

    def __init__(self, channels: int, growth: int, n_blocks: int):
        super().__init__()
        self.blocks = nn.ModuleList(conv3x3(channels + i * growth, growth) for i in range(n_blocks))
        self.compress = nn.Conv2d(channels + n_blocks * growth, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        feats = [x]
        for conv in self.blocks:
            feats.append(F.gelu(conv(torch.cat(feats, dim=1))))
        return self.compress(torch.cat(feats, dim=1)) + x


class DenseResidualExtractor(nn.Module):
    def __init__(self, channels: int, n_groups: int, n_blocks: int, growth: int):
        super().__init__()
        self.groups = nn.ModuleList(DenseResidualGroup(channels, growth, n_blocks) for _ in range(n_groups))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for g in self.groups:
            x = g(x)
        return x


def pixel_shuffle(x: torch.Tensor, r: int = 2) -> torch.Tensor:
    """``(B, C*r*r, H, W) -> (B, C, r*H, r*W)``.

    Output channel ``c`` takes its ``r x r`` block, row-major, from input
    channels ``c*r*r ... c*r*r + r*r - 1``.
    """
    return F.pixel_shuffle(x, r)


class MIDRCT(nn.Module):
    def __init__(self, cfg: NetworkConfig, deep: Optional[nn.Module] = None):
        super().__init__()
        self.cfg = cfg
        f = cfg.embed_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.shallow = conv3x3(3, f)
            self.fusion = conv3x3(cfg.n_frames * f, f)
            self.deep = deep if deep is not None else DenseResidualExtractor(f, cfg.rdg_count, cfg.blocks_per_group, cfg.growth)
            self.recon_fuse = conv3x3(2 * f, f)
            self.recon_out = conv3x3(f, 3 * cfg.scale**2)
        self.fallbacks = 0  # degenerate correlations replaced by a zero shift
        self.last_shifts: list[list[float]] = []

    @property
    def reference_index(self) -> int:
        return self.cfg.n_frames // 2

    def shallow_extract(self, frames: torch.Tensor) -> torch.Tensor:
        """``(B, N, 3, H, W) -> (B, N, f, H, W)`` with one shared conv."""
        b, n, c, h, w = frames.shape
        return self.shallow(frames.reshape(b * n, c, h, w)).reshape(b, n, -1, h, w)

    def estimate_shifts(self, feats: torch.Tensor) -> list[list[float]]:
        """Per item, per frame vertical shift onto the reference (from channel-mean maps)."""
        maps = feats.detach().mean(dim=2).cpu().double().numpy()
        ref = self.reference_index
        shifts = []
        for item in maps:
            row = []
            for i, m in enumerate(item):
                if i == ref:
                    row.append(0.0)
                    continue
                try:
                    row.append(estimate_vertical_subpixel_shift(item[ref], m, upsample=self.cfg.align_upsample).dy)
                except DegenerateInputError:
                    self.fallbacks += 1
                    row.append(0.0)
            shifts.append(row)
        return shifts

    def warp(self, feats: torch.Tensor, shifts: Sequence[Sequence[float]]) -> torch.Tensor:
        """Apply per-item, per-frame vertical translations; shifts enter as constants."""
        h = feats.shape[-2]
        mats = np.stack([np.stack([vertical_warp_matrix(h, dy) for dy in row]) for row in shifts])
        op = torch.as_tensor(mats, dtype=feats.dtype, device=feats.device)
        return torch.einsum("bnij,bncjw->bnciw", op, feats)

    def fuse_features(self, feats: torch.Tensor, align_enabled: Optional[bool] = None) -> torch.Tensor:
        """``(B, N, f, H, W) -> (B, f, H, W)``: optional alignment, concat, 3x3 reduction."""
        if feats.shape[1] != self.cfg.n_frames:
            raise ValueError(f"expected {self.cfg.n_frames} feature maps, got {feats.shape[1]}")
        align = self.cfg.align_enabled if align_enabled is None else align_enabled
        if align:
            shifts = self.estimate_shifts(feats)
            self.last_shifts = shifts
            feats = self.warp(feats, shifts)
        b, n, f, h, w = feats.shape
        return self.fusion(feats.reshape(b, n * f, h, w))

    def deep_extract(self, x: torch.Tensor) -> torch.Tensor:
        return self.deep(x)

    def reconstruct(self, shallow: torch.Tensor, deep: torch.Tensor) -> torch.Tensor:
        if shallow.shape != deep.shape:
            raise ValueError(f"shallow/deep shapes differ: {tuple(shallow.shape)} vs {tuple(deep.shape)}")
        x = self.recon_fuse(torch.cat([shallow, deep], dim=1))
        return pixel_shuffle(self.recon_out(x), self.cfg.scale)

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """``(B, N, 3, H, W)`` LR bursts to unclamped ``(B, 3, 2H, 2W)``."""
        if frames.ndim != 5 or frames.shape[1] != self.cfg.n_frames:
            raise ValueError(f"expected (B, {self.cfg.n_frames}, 3, H, W) frames, got {tuple(frames.shape)}")
        shallow = self.fuse_features(self.shallow_extract(frames))
        return self.reconstruct(shallow, self.deep_extract(shallow))


class ConfigError(ValueError):
    pass


def frames_tensor(frames: Sequence[np.ndarray], dtype=torch.float32) -> torch.Tensor:
    """List of ``(H, W, 3)`` images to a ``(N, 3, H, W)`` tensor."""
    return torch.as_tensor(np.stack([np.asarray(f).transpose(2, 0, 1) for f in frames]), dtype=dtype)


def image_tensor(img: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.as_tensor(np.asarray(img).transpose(2, 0, 1).copy(), dtype=dtype)


def tensor_image(t: torch.Tensor) -> np.ndarray:
    return t.detach().cpu().double().numpy().transpose(1, 2, 0)


@torch.no_grad()
def forward(sample, cfg: NetworkConfig, model: MIDRCT) -> np.ndarray:
    """Super-resolve one burst; output clamped to ``[0, 1]``."""
    if sample.n_frames != cfg.n_frames:
        raise ConfigError(f"burst has {sample.n_frames} frames, config expects {cfg.n_frames}")
    model.eval()
    out = model(frames_tensor(sample.frames)[None])[0]
    return np.clip(tensor_image(out), 0.0, 1.0)


@torch.no_grad()
def enhance_batch(model: MIDRCT, samples, batch_size: int = 8) -> list[np.ndarray]:
    model.eval()
    outs = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i : i + batch_size]
        x = torch.stack([frames_tensor(s.frames) for s in chunk])
        outs += [np.clip(tensor_image(o), 0.0, 1.0) for o in model(x)]
    return outs


def fusion_param_count(cfg: NetworkConfig) -> int:
    return 3 * 3 * cfg.n_frames * cfg.embed_dim * cfg.embed_dim + cfg.embed_dim


def config_json(cfg: NetworkConfig) -> str:
    return json.dumps(asdict(cfg), sort_keys=True)
