"""``rootsr`` command line: one subcommand per pipeline stage.

Every subcommand takes ``--config``, ``--seed``, ``--out`` and repeatable
``--set key=value`` overrides. Inputs come from the ``paths`` section of the
config; outputs go to ``--out`` only. Failures print one JSON line on stderr::

    {"error": "config", "field": "train.lr", "message": "..."}
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import config as cfgmod
from .align import DegenerateInputError, estimate_vertical_subpixel_shift
from .burst import (
    DatasetError,
    assign_splits,
    burst_from_scene,
    ingest_real_capture,
    load_dataset,
    persist_dataset,
    random_odd_offsets,
    read_manifest,
    sample_scene_params,
)
from .imageops import ImageFormatError, read_png, resize, write_png
from .metrics import evaluate_dataset, format_table
from .synthgen import export_scene, generate_scene, load_scene
from .traits import analyze, format_trait_table

log = logging.getLogger("rootsr")

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
SCENES_MANIFEST = "scenes.jsonl"


class CommandError(RuntimeError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _require_path(cfg: dict, key: str) -> str:
    p = cfg["paths"][key]
    if p is None:
        raise cfgmod.ConfigValidationError(f"paths.{key}", "required by this command (use --set paths.%s=DIR)" % key)
    if not os.path.exists(p):
        raise cfgmod.ConfigValidationError(f"paths.{key}", f"does not exist: {p}")
    return p


def _split(cfg: dict) -> Optional[str]:
    s = cfg["data"]["split"]
    return None if s in (None, "all") else s


# --- subcommands ----------------------------------------------------------


def cmd_gen_data(cfg: dict, out: str) -> dict:
    rng = np.random.default_rng(cfg["seed"])
    sdir = os.path.join(out, "scenes")
    os.makedirs(sdir, exist_ok=True)
    records = []
    for i in range(cfg["data"]["n_scenes"]):
        params = sample_scene_params(rng, cfg["scene"]["size"], cfg["scene"]["vary_params"])
        scene = generate_scene(params)
        sid = f"scene_{i:05d}"
        export_scene(scene, os.path.join(sdir, sid))
        records.append({"scene_id": sid, "dir": f"scenes/{sid}", "seed": params.seed, "hair_count": scene.truth.hair_count})
    with open(os.path.join(out, SCENES_MANIFEST), "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return {"scenes": len(records), "manifest": SCENES_MANIFEST}


def _read_scene_manifest(directory: str) -> list[dict]:
    path = os.path.join(directory, SCENES_MANIFEST)
    if not os.path.exists(path):
        raise DatasetError(f"no {SCENES_MANIFEST} in {directory}")
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def cmd_make_burst(cfg: dict, out: str) -> dict:
    src = _require_path(cfg, "scenes")
    d = cfg["data"]
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]).spawn(2)[1])
    samples = []
    for k, rec in enumerate(_read_scene_manifest(src)):
        scene = load_scene(os.path.join(src, rec["dir"]))
        offs = random_odd_offsets(rng, d["n_frames"], d["max_offset"]) if d["offsets"] == "random" else d["offsets"]
        samples.append(burst_from_scene(scene, d["window"], offs, f"s{k:05d}"))
    assign_splits(samples, d["val_fraction"])
    persist_dataset(samples, out)
    return {"samples": len(samples), "val": sum(s.split == "val" for s in samples)}


def _input_samples(cfg: dict):
    """Synthetic dataset (``paths.dataset``) or a real capture folder (``paths.capture``)."""
    if cfg["paths"]["dataset"] is not None:
        samples, _ = load_dataset(_require_path(cfg, "dataset"), _split(cfg))
    elif cfg["paths"]["capture"] is not None:
        samples = ingest_real_capture(_require_path(cfg, "capture"))
    else:
        raise cfgmod.ConfigValidationError("paths.dataset", "set paths.dataset or paths.capture")
    if not samples:
        raise DatasetError("no samples selected")
    return samples


def cmd_align(cfg: dict, out: str) -> dict:
    samples = _input_samples(cfg)
    rows, errors = [], []
    for s in samples:
        ref = s.frames[s.reference_index].mean(axis=2)
        for i, f in enumerate(s.frames):
            row = {"sample_id": s.sample_id, "frame": i}
            try:
                est = estimate_vertical_subpixel_shift(ref, f.mean(axis=2))
                row.update(dy=est.dy, dx=est.dx, peak=est.peak)
            except DegenerateInputError as exc:
                row.update(dy=None, dx=None, peak=None, error=str(exc))
            if s.true_shifts_lr is not None:
                row["true_dy"] = s.true_shifts_lr[i]
                if row["dy"] is not None:
                    row["abs_error"] = abs(row["dy"] - row["true_dy"])
                    errors.append(row["abs_error"])
            rows.append(row)
    summary = {"frames": len(rows)}
    if errors:
        e = np.asarray(errors)
        summary.update(within_0_25=float(np.mean(e <= 0.25)), within_0_5=float(np.mean(e <= 0.5)), max_abs_error=float(e.max()))
    with open(os.path.join(out, "shifts.json"), "w") as fh:
        json.dump({"summary": summary, "estimates": rows}, fh, indent=2)
    return summary


def cmd_train(cfg: dict, out: str) -> dict:
    from .training import save_checkpoint, train

    ds = _require_path(cfg, "dataset")
    train_set, _ = load_dataset(ds, "train")
    val_set, _ = load_dataset(ds, "val")
    if not train_set or not val_set:
        raise DatasetError(f"{ds} needs both train and val samples (got {len(train_set)} / {len(val_set)})")
    ckpt = train(train_set, val_set, cfgmod.network_config(cfg), cfgmod.hyper(cfg), log_path=os.path.join(out, "loss_log.csv"))
    save_checkpoint(ckpt, os.path.join(out, "checkpoint.safetensors"))
    cfgmod.dump_config(cfg, os.path.join(out, "config.yaml"))
    return {"best_epoch": ckpt.epoch, "val_loss": ckpt.val_loss, "steps": len(ckpt.history)}


def cmd_enhance(cfg: dict, out: str) -> dict:
    from .network import enhance_batch
    from .training import load_checkpoint

    ckpt = load_checkpoint(_require_path(cfg, "checkpoint"))
    samples = _input_samples(cfg)
    if samples[0].n_frames != ckpt.config.n_frames:
        raise DatasetError(f"bursts have {samples[0].n_frames} frames, checkpoint expects {ckpt.config.n_frames}")
    model = ckpt.model()
    for s, img in zip(samples, enhance_batch(model, samples)):
        write_png(os.path.join(out, f"{s.sample_id}.png"), img)
    if model.fallbacks:
        log.warning("%d alignment fallback(s) to zero shift", model.fallbacks)
    return {"images": len(samples), "align_fallbacks": model.fallbacks}


def cmd_baseline(cfg: dict, out: str) -> dict:
    samples = _input_samples(cfg)
    for mode in ("bilinear", "bicubic"):
        os.makedirs(os.path.join(out, mode), exist_ok=True)
    for s in samples:
        ref = s.frames[s.reference_index]
        h, w = ref.shape[:2]
        for mode in ("bilinear", "bicubic"):
            write_png(os.path.join(out, mode, f"{s.sample_id}.png"), resize(ref, 2 * h, 2 * w, mode))
    return {"images": len(samples), "methods": ["bilinear", "bicubic"]}


def _refs_dir(cfg: dict, out: str) -> Optional[str]:
    refs = cfg["paths"]["refs"]
    if refs is None:
        return None
    refs = _require_path(cfg, "refs")
    if not os.path.exists(os.path.join(refs, "manifest.jsonl")):
        return refs
    # a synthetic dataset: export its HR targets as same-named PNGs
    target = os.path.join(out, "refs")
    os.makedirs(target, exist_ok=True)
    for rec in read_manifest(refs):
        if rec.get("hr") and (_split(cfg) is None or rec.get("split") == _split(cfg)):
            write_png(os.path.join(target, f"{rec['sample_id']}.png"), read_png(os.path.join(refs, rec["hr"])))
    return target


def cmd_eval(cfg: dict, out: str) -> dict:
    outputs = cfg["paths"]["outputs"]
    if outputs is None:
        raise cfgmod.ConfigValidationError("paths.outputs", "required by this command")
    dirs = outputs if isinstance(outputs, list) else [outputs]
    for d in dirs:
        if not os.path.isdir(d):
            raise cfgmod.ConfigValidationError("paths.outputs", f"does not exist: {d}")
    refs = _refs_dir(cfg, out)
    reports = []
    for d in dirs:
        name = os.path.basename(os.path.normpath(d))
        reports.append(evaluate_dataset(d, refs, cfg["metrics"]["brisque_model"], os.path.join(out, f"report_{name}.json"), name))
    table = format_table(reports)
    with open(os.path.join(out, "report.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return {r.name: {"psnr_db": r.mean_psnr_db, "ssim": r.mean_ssim, "mse": r.mean_mse, "brisque": r.mean_brisque} for r in reports}


def cmd_analyze(cfg: dict, out: str) -> dict:
    mm = cfg["calibration"]["mm_per_px"]
    reports = {}
    truths = {}
    p = cfg["paths"]
    if p["root_mask"] is not None or p["hair_mask"] is not None:
        root = read_png(_require_path(cfg, "root_mask"))
        hair = read_png(_require_path(cfg, "hair_mask"))
        reports["input"] = analyze(root, hair, mm)
    else:
        samples, _ = load_dataset(_require_path(cfg, "dataset"), _split(cfg))
        for s in samples:
            if s.root_mask is None:
                raise DatasetError(f"sample {s.sample_id}: no root mask stored")
            hair = np.zeros_like(s.root_mask)
            for m in s.hair_masks:
                hair = np.maximum(hair, m)
            reports[s.sample_id] = analyze(s.root_mask, hair, mm)
            truths[s.sample_id] = len(s.hair_masks)
    with open(os.path.join(out, "traits.json"), "w") as fh:
        json.dump({k: r.to_dict() for k, r in reports.items()}, fh, indent=2)
    table = format_trait_table(reports if len(reports) <= 8 else dict(list(reports.items())[:8]))
    with open(os.path.join(out, "traits.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return {"analyzed": len(reports), "hairs": sum(r.hair_count for r in reports.values())}


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate synthetic root scenes with ground-truth masks"),
    "make-burst": (cmd_make_burst, "build sub-pixel shifted LR bursts from generated scenes"),
    "align": (cmd_align, "estimate vertical sub-pixel shifts of each burst"),
    "train": (cmd_train, "train the multi-image network; writes checkpoint and loss log"),
    "enhance": (cmd_enhance, "super-resolve bursts with a trained checkpoint"),
    "baseline": (cmd_baseline, "bilinear and bicubic x2 upscaling of the reference frame"),
    "eval": (cmd_eval, "quality report for one or more output folders"),
    "analyze": (cmd_analyze, "root and root-hair traits from segmentation masks"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override a config field, e.g. train.epochs=2")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="rootsr", description="Multi-image super-resolution and trait analysis for root imagery.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_, description=help_)
    return parser


def _fail(kind: str, message: str, code: int, field: Optional[str] = None) -> int:
    rec = {"error": kind, "message": " ".join(str(message).split())}
    if field is not None:
        rec["field"] = field
    print(json.dumps(rec), file=sys.stderr)
    return code


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config, args.overrides, args.seed)
    except cfgmod.ConfigValidationError as exc:
        return _fail("config", str(exc), EXIT_CONFIG, exc.path)
    fn = COMMANDS[args.command][0]
    try:
        os.makedirs(args.out, exist_ok=True)
        summary = fn(cfg, args.out)
    except cfgmod.ConfigValidationError as exc:
        return _fail("config", str(exc), EXIT_CONFIG, exc.path)
    except (DatasetError, ImageFormatError, OSError, ValueError, RuntimeError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_ERROR)
    print(json.dumps({"command": args.command, "out": args.out, **summary}, default=str))
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
