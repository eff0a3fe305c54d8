"""Training loop, checkpoint files and finite-difference gradient checks."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from safetensors import SafetensorError, safe_open
from safetensors.torch import save as st_save
from torch import nn

from .network import MIDRCT, NetworkConfig, frames_tensor, image_tensor

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "rootsr-checkpoint"
CHECKPOINT_VERSION = "1"


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        self.epoch, self.step, self.loss = epoch, step, loss


class CheckpointError(ValueError):
    pass


@dataclass
class Hyper:
    epochs: int = 15
    batch_size: int = 8
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    loss: str = "l1"
    max_steps: Optional[int] = None  # stop early after this many optimizer steps
    eval_batch_size: int = 16

    def __post_init__(self):
        if self.loss not in ("l1", "l2"):
            raise ValueError(f"loss must be 'l1' or 'l2', got {self.loss!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        self.betas = tuple(self.betas)


@dataclass
class Checkpoint:
    config: NetworkConfig
    parameters: dict[str, torch.Tensor]
    epoch: int
    val_loss: float
    history: list[dict] = field(default_factory=list)

    def model(self) -> MIDRCT:
        m = MIDRCT(self.config)
        load_parameters(m, self.parameters)
        return m


def _loss_fn(name: str) -> Callable:
    return F.l1_loss if name == "l1" else F.mse_loss


def stack_samples(samples) -> tuple[torch.Tensor, torch.Tensor]:
    """``(S, N, 3, H, W)`` frames and ``(S, 3, 2H, 2W)`` targets."""
    if any(s.hr_target is None for s in samples):
        raise ValueError("every sample needs an hr_target for training")
    x = torch.stack([frames_tensor(s.frames) for s in samples])
    y = torch.stack([image_tensor(s.hr_target) for s in samples])
    return x, y


@torch.no_grad()
def evaluate_loss(model: nn.Module, x: torch.Tensor, y: torch.Tensor, loss: str = "l1", batch_size: int = 16) -> float:
    """Mean per-pixel loss over a set, on unclamped outputs."""
    model.eval()
    fn = _loss_fn(loss)
    total = 0.0
    for i in range(0, len(x), batch_size):
        out = model(x[i : i + batch_size])
        total += float(fn(out, y[i : i + batch_size], reduction="sum"))
    return total / y.numel()


def train(train_set, val_set, cfg: NetworkConfig, hyper: Hyper = Hyper(), log_path=None, model: Optional[MIDRCT] = None) -> Checkpoint:
    """Adam on the reconstruction loss; keeps the parameters of the best validation epoch.

    The data order depends only on ``cfg.seed``, so a rerun reproduces the loss
    trace exactly on the same platform.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be non-empty")
    xt, yt = stack_samples(train_set)
    xv, yv = stack_samples(val_set)
    if xt.shape[1:] != xv.shape[1:] or yt.shape[1:] != yv.shape[1:]:
        raise ValueError("train and validation shapes differ")
    if xt.shape[1] != cfg.n_frames:
        raise ValueError(f"samples have {xt.shape[1]} frames, config expects {cfg.n_frames}")

    model = model if model is not None else MIDRCT(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=hyper.lr, betas=hyper.betas, eps=hyper.eps)
    fn = _loss_fn(hyper.loss)
    order_rng = torch.Generator().manual_seed(cfg.seed)

    history: list[dict] = []
    best: Optional[tuple[int, float, dict]] = None
    step = 0
    for epoch in range(1, hyper.epochs + 1):
        model.train()
        fallbacks0 = model.fallbacks
        perm = torch.randperm(len(xt), generator=order_rng)
        for i in range(0, len(xt), hyper.batch_size):
            idx = perm[i : i + hyper.batch_size]
            loss = fn(model(xt[idx]), yt[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, step, value)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step += 1
            history.append({"epoch": epoch, "step": step, "train_loss": value, "val_loss": None})
            if hyper.max_steps is not None and step >= hyper.max_steps:
                break
        if model.fallbacks > fallbacks0:
            log.info("epoch %d: %d alignment fallback(s) to zero shift", epoch, model.fallbacks - fallbacks0)
        val = evaluate_loss(model, xv, yv, hyper.loss, hyper.eval_batch_size)
        history[-1]["val_loss"] = val
        log.info("epoch %d step %d train %.6f val %.6f", epoch, step, history[-1]["train_loss"], val)
        if best is None or val < best[1]:
            best = (epoch, val, {k: v.detach().clone() for k, v in model.state_dict().items()})
        if hyper.max_steps is not None and step >= hyper.max_steps:
            break

    epoch, val, params = best
    model.load_state_dict(params)
    ckpt = Checkpoint(cfg, params, epoch, val, history)
    if log_path is not None:
        write_loss_log(history, log_path)
    return ckpt


def write_loss_log(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "train_loss", "val_loss"])
        for h in history:
            w.writerow([h["epoch"], h["step"], repr(h["train_loss"]), "" if h["val_loss"] is None else repr(h["val_loss"])])


# --- checkpoint files -----------------------------------------------------


def expected_shapes(cfg: NetworkConfig) -> dict[str, tuple]:
    return {k: tuple(v.shape) for k, v in MIDRCT(cfg).state_dict().items()}


def load_parameters(model: MIDRCT, params: dict[str, torch.Tensor]) -> None:
    want = {k: tuple(v.shape) for k, v in model.state_dict().items()}
    got = {k: tuple(v.shape) for k, v in params.items()}
    if want != got:
        missing = sorted(set(want) - set(got))
        extra = sorted(set(got) - set(want))
        wrong = sorted(k for k in set(want) & set(got) if want[k] != got[k])
        raise CheckpointError(f"parameters do not match the configured architecture (missing {missing}, unexpected {extra}, wrong shape {wrong})")
    model.load_state_dict({k: v.to(torch.float32) for k, v in params.items()})


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Safetensors file: little-endian float32 arrays plus config JSON in the header."""
    tensors = {k: v.detach().to(torch.float32).contiguous() for k, v in ckpt.parameters.items()}
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": json.dumps(asdict(ckpt.config), sort_keys=True),
        "epoch": str(ckpt.epoch),
        "val_loss": repr(float(ckpt.val_loss)),
    }
    blob = st_save(tensors, metadata=meta)
    # re-emit the JSON header with sorted keys so equal checkpoints are equal files
    n = int.from_bytes(blob[:8], "little")
    header = json.dumps(json.loads(blob[8 : 8 + n]), sort_keys=True, separators=(",", ":")).encode()
    header += b" " * (-len(header) % 8)
    with open(path, "wb") as fh:
        fh.write(len(header).to_bytes(8, "little") + header + blob[8 + n :])


def load_checkpoint(path) -> Checkpoint:
    try:
        with safe_open(str(path), framework="pt") as fh:
            meta = fh.metadata() or {}
            params = {k: fh.get_tensor(k) for k in fh.keys()}
    except (OSError, ValueError, RuntimeError, SafetensorError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
    try:
        cfg = NetworkConfig.from_dict(json.loads(meta["config"]))
        ckpt = Checkpoint(cfg, params, int(meta["epoch"]), float(meta["val_loss"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"bad checkpoint header in {path}: {exc}") from exc
    load_parameters(MIDRCT(cfg), params)  # shape validation
    return ckpt


# --- gradient validation --------------------------------------------------


def _rel_error(a: torch.Tensor, n: torch.Tensor, floor: float) -> float:
    denom = torch.maximum(torch.maximum(a.abs(), n.abs()), torch.tensor(floor, dtype=a.dtype))
    return float(((a - n).abs() / denom).max()) if a.numel() else 0.0


def gradient_check(op: Callable, inputs: Sequence[torch.Tensor], params: Sequence[torch.Tensor] = (), eps: float = 1e-4, seed: int = 0, floor: float = 1e-8, scalar: bool = False) -> float:
    """Max relative error between autograd and central finite differences.

    ``op`` maps ``inputs`` to a tensor; unless ``scalar`` is set it is reduced
    with a fixed random projection so every output element contributes. Checked
    leaves are the ``inputs`` plus ``params`` (e.g. a layer's weights); all are
    cast to double in place by the caller's responsibility (see :func:`double_module`).
    """
    inputs = [t.detach().double().requires_grad_(True) for t in inputs]
    leaves = inputs + list(params)
    if any(p.dtype != torch.float64 for p in params):
        raise TypeError("gradient_check needs double-precision parameters")
    g = torch.Generator().manual_seed(seed)
    proj = None

    def raw() -> torch.Tensor:
        return op(*inputs)

    def reduce(out: torch.Tensor) -> torch.Tensor:
        nonlocal proj
        if scalar:
            return out
        if proj is None:
            proj = torch.randn(out.shape, generator=g, dtype=torch.float64)
        return (out * proj).sum()

    for p in leaves:
        p.grad = None
    reduce(raw()).backward()
    analytic = [p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for p in leaves]

    worst = 0.0
    with torch.no_grad():
        for p, a in zip(leaves, analytic):
            flat = p.view(-1)
            num = torch.zeros(flat.numel(), dtype=torch.float64)
            for i in range(flat.numel()):
                orig = float(flat[i])
                flat[i] = orig + eps
                up = raw()
                flat[i] = orig - eps
                down = raw()
                flat[i] = orig
                # difference per output element before projecting keeps roundoff local
                num[i] = float(reduce(up - down)) / (2 * eps) if not scalar else (float(up) - float(down)) / (2 * eps)
            worst = max(worst, _rel_error(a.view(-1), num, floor))
    return worst


def double_module(m: nn.Module) -> nn.Module:
    return m.double()


def layer_params(m: nn.Module) -> list[torch.Tensor]:
    return [p for p in m.parameters() if p.requires_grad]
