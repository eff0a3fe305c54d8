"""Pipeline configuration: versioned YAML file plus dotted ``key=value`` overrides."""

from __future__ import annotations

import copy
import os
from dataclasses import fields
from typing import Any, Optional

import yaml

from .network import NetworkConfig
from .training import Hyper

CONFIG_VERSION = 1


class ConfigValidationError(ValueError):
    """Raised with the dotted path of the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def _dataclass_defaults(cls) -> dict:
    return {f.name: (list(v) if isinstance(v := getattr(cls(), f.name), tuple) else v) for f in fields(cls)}


def default_config() -> dict:
    return {
        "version": CONFIG_VERSION,
        "seed": 0,
        "scene": {
            "size": 160,
            "vary_params": True,
        },
        "data": {
            "n_scenes": 600,
            "window": 128,
            "offsets": [-3, 0, 3],  # or "random": odd offsets up to max_offset per burst
            "n_frames": 3,
            "max_offset": 5,
            "val_fraction": 1 / 6,
            "split": "val",  # split used by align/enhance/baseline/analyze/eval; "all" for every sample
        },
        "network": {k: v for k, v in _dataclass_defaults(NetworkConfig).items() if k != "seed"},
        "train": _dataclass_defaults(Hyper),
        "paths": {
            "scenes": None,
            "dataset": None,
            "checkpoint": None,
            "capture": None,
            "outputs": None,
            "refs": None,
            "root_mask": None,
            "hair_mask": None,
        },
        "metrics": {"brisque_model": None},
        "calibration": {"mm_per_px": 0.01},
    }


def parse_value(text: str) -> Any:
    """YAML scalar parsing so ``--set train.lr=5e-4`` and ``--set data.offsets=[-3,0,3]`` work."""
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigValidationError(assignment, "override must look like key=value")
    key, _, raw = assignment.partition("=")
    parts = key.strip().split(".")
    node = cfg
    for i, p in enumerate(parts[:-1]):
        if not isinstance(node.get(p), dict):
            raise ConfigValidationError(".".join(parts[: i + 1]), "unknown section")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigValidationError(key, "unknown field")
    node[parts[-1]] = parse_value(raw)


def _merge(base: dict, user: dict, prefix: str = "") -> None:
    for k, v in user.items():
        path = f"{prefix}{k}"
        if k not in base:
            raise ConfigValidationError(path, "unknown field")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigValidationError(path, "expected a mapping")
            _merge(base[k], v, path + ".")
        else:
            base[k] = v


def _check_type(path: str, value, default) -> None:
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, list):
        ok = isinstance(value, list) or (path == "data.offsets" and value == "random")
    else:
        ok = True
    if not ok:
        raise ConfigValidationError(path, f"expected {type(default).__name__}, got {type(value).__name__}")


def _walk_types(cfg: dict, defaults: dict, prefix: str = "") -> None:
    for k, d in defaults.items():
        path = f"{prefix}{k}"
        if isinstance(d, dict):
            _walk_types(cfg[k], d, path + ".")
            continue
        if isinstance(d, float) and isinstance(cfg[k], str):
            # YAML 1.1 reads exponent forms without a dot (1e-3) as strings
            try:
                cfg[k] = float(cfg[k])
            except ValueError:
                pass
        _check_type(path, cfg[k], d)


def validate(cfg: dict) -> dict:
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigValidationError("version", f"unsupported config version {cfg.get('version')!r} (expected {CONFIG_VERSION})")
    _walk_types(cfg, default_config())
    for section, cls in (("network", network_config), ("train", hyper)):
        try:
            cls(cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigValidationError(section, str(exc)) from exc
    d = cfg["data"]
    if d["offsets"] != "random":
        offs = d["offsets"]
        if not isinstance(offs, list) or len(offs) % 2 == 0 or len(offs) < 3:
            raise ConfigValidationError("data.offsets", "need an odd-length list (>= 3) or 'random'")
        if any(not isinstance(o, int) for o in offs) or offs[len(offs) // 2] != 0 or any(o % 2 == 0 for i, o in enumerate(offs) if i != len(offs) // 2):
            raise ConfigValidationError("data.offsets", "non-reference offsets must be odd integers and the reference 0")
        if len(offs) != cfg["network"]["n_frames"]:
            raise ConfigValidationError("data.offsets", "length must equal network.n_frames")
    for key, lo in (("n_scenes", 1), ("window", 16), ("n_frames", 3), ("max_offset", 1)):
        if d[key] < lo:
            raise ConfigValidationError(f"data.{key}", f"must be >= {lo}")
    if d["window"] % 2:
        raise ConfigValidationError("data.window", "must be even")
    if d["max_offset"] % 2 == 0:
        raise ConfigValidationError("data.max_offset", "must be odd")
    if d["n_frames"] != cfg["network"]["n_frames"]:
        raise ConfigValidationError("data.n_frames", "must equal network.n_frames")
    if not 0 <= d["val_fraction"] < 1:
        raise ConfigValidationError("data.val_fraction", "must be in [0, 1)")
    reach = d["max_offset"] if d["offsets"] == "random" else max(abs(o) for o in d["offsets"])
    if cfg["scene"]["size"] < d["window"] + 2 * reach:
        raise ConfigValidationError("scene.size", "must leave room for the window plus the largest offset")
    if not cfg["calibration"]["mm_per_px"] > 0:
        raise ConfigValidationError("calibration.mm_per_px", "must be > 0")
    return cfg


def load_config(path: Optional[str] = None, overrides=(), seed: Optional[int] = None) -> dict:
    cfg = default_config()
    if path is not None:
        if not os.path.exists(path):
            raise ConfigValidationError("--config", f"file not found: {path}")
        with open(path) as fh:
            try:
                user = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigValidationError("--config", f"invalid YAML ({exc})".replace("\n", " ")) from exc
        if not isinstance(user, dict):
            raise ConfigValidationError("--config", "top level must be a mapping")
        _merge(cfg, user)
    for o in overrides:
        apply_override(cfg, o)
    if seed is not None:
        cfg["seed"] = seed
    return validate(cfg)


def network_config(cfg: dict) -> NetworkConfig:
    return NetworkConfig(**cfg["network"], seed=cfg["seed"])


def hyper(cfg: dict) -> Hyper:
    return Hyper(**cfg["train"])


def dump_config(cfg: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(copy.deepcopy(cfg), fh, sort_keys=False)


__all__ = [
    "CONFIG_VERSION",
    "ConfigValidationError",
    "apply_override",
    "default_config",
    "dump_config",
    "hyper",
    "load_config",
    "network_config",
    "validate",
]
