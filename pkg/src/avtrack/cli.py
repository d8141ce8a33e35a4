"""Command-line entry points: train / track / ablate / gradcheck.

Every run writes a manifest (resolved config, seed, switches, input paths,
artifact hashes). --from-manifest repeats a run; outputs are byte-identical
except the wall-clock steps_per_s column of ablation.csv, whose manifest
hash therefore covers a timing-free projection of the file.

Exit codes: 0 success, 1 check failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import kernel_backend
from .blockchecks import REGISTRY, run_block_checks
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .encoder import EncoderConfig
from .inference import InferenceConfig, NetPredictor, OraclePredictor, run_episode
from .losses import LossConfig
from .model import ModelConfig, TrackerNet
from .synthworld import (
    OcclusionEvent,
    WorldConfig,
    evaluate,
    generate_sequence,
    load_sequence,
)
from .train import TrainConfig, train


class UsageError(Exception):
    pass


MODEL_KEYS = {"frame_side", "patch", "channels", "layers", "train_frames",
              "heads", "ffn_ratio", "decoder_depth", "sigma_factor",
              "ffn_activation"}
TRAIN_KEYS = {"steps", "lr", "weight_decay", "sequence_pool", "lambda_cls",
              "hinge_threshold"}
WORLD_KEYS = {"frame_side", "object_count", "appearance_seed",
              "distractor_similarity", "speed", "jitter", "scale_drift",
              "length", "target_size", "occlusion_events"}
INFER_KEYS = {"tau_c", "tau_2", "tau_1", "scale_trigger", "search_factor",
              "mask_radius_cells", "scale_measure"}

DEFAULT_CONFIG = {
    "model": {"frame_side": 72, "patch": 8, "channels": 64, "layers": 2,
              "train_frames": 2, "heads": 2, "ffn_ratio": 2,
              "decoder_depth": 4, "sigma_factor": 0.25,
              "ffn_activation": "gelu"},
    "train": {"steps": 500, "lr": 5e-4, "weight_decay": 1e-4,
              "sequence_pool": 6, "lambda_cls": 200.0,
              "hinge_threshold": 0.05},
    "world": {"object_count": 2, "appearance_seed": 7,
              "distractor_similarity": 0.3, "speed": 1.2, "jitter": 0.0,
              "scale_drift": 0.0, "length": 40, "target_size": 16,
              "occlusion_events": []},
    "inference": {"tau_c": 0.5, "tau_2": 0.85, "tau_1": 1.0,
                  "scale_trigger": 16.0, "search_factor": 4.0,
                  "mask_radius_cells": 1, "scale_measure": "area"},
    "eval": {"episodes": 3, "seed_offset": 500},
    "gradcheck": {"seeds": 20, "eps": 1e-5, "tol": 1e-4},
    "ablate": {"variants": [
        {"name": "base", "disable_jse": True, "disable_adaptor": True},
        {"name": "+jse", "disable_adaptor": True},
        {"name": "+adaptor", "disable_jse": True},
        {"name": "+both"},
    ]},
}


def _merge_config(user: dict) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    for section, values in user.items():
        if section not in cfg:
            raise UsageError(f"unknown config section {section!r}")
        if section == "ablate":
            cfg[section].update(values)
            continue
        known = {"model": MODEL_KEYS, "train": TRAIN_KEYS, "world": WORLD_KEYS,
                 "inference": INFER_KEYS}.get(section)
        for key in values:
            if known is not None and key not in known:
                raise UsageError(f"unknown key {section}.{key}")
        cfg[section].update(values)
    return cfg


def _model_config(cfg: dict, paper_scale: bool, switches: dict) -> ModelConfig:
    m = cfg["model"]
    enc = EncoderConfig.paper_scale() if paper_scale else EncoderConfig(
        frame_side=m["frame_side"], patch=m["patch"], channels=m["channels"],
        layers=m["layers"], train_frames=m["train_frames"], heads=m["heads"],
        ffn_ratio=m["ffn_ratio"])
    base = ModelConfig(encoder=enc, decoder_depth=m["decoder_depth"],
                       sigma_factor=m["sigma_factor"],
                       ffn_activation=m["ffn_activation"])
    return base.with_switches(disable_jse=switches.get("disable_jse", False),
                              disable_adaptor=switches.get("disable_adaptor", False),
                              plain_decoder=switches.get("plain_decoder", False))


def _world_config(cfg: dict) -> WorldConfig:
    w = dict(cfg["world"])
    w.setdefault("frame_side", cfg["model"]["frame_side"])
    events = tuple(OcclusionEvent(*e) for e in w.pop("occlusion_events", []))
    return WorldConfig(occlusion_events=events, **w)


def _train_config(cfg: dict) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(steps=t["steps"], lr=t["lr"],
                       weight_decay=t["weight_decay"],
                       sequence_pool=t["sequence_pool"],
                       loss=LossConfig(lambda_cls=t["lambda_cls"],
                                       hinge_threshold=t["hinge_threshold"]))


def _inference_config(cfg: dict, switches: dict) -> InferenceConfig:
    i = cfg["inference"]
    return InferenceConfig(
        tau_c=i["tau_c"], tau_2=i["tau_2"], tau_1=i["tau_1"],
        scale_trigger=i["scale_trigger"], search_factor=i["search_factor"],
        mask_radius_cells=i["mask_radius_cells"], scale_measure=i["scale_measure"],
        enable_cycletrack=not switches.get("disable_cycletrack", False),
        enable_dfu=not switches.get("disable_dfu", False))


# -- artifact helpers -----------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _ablation_projection(path: Path) -> str:
    """Hash of ablation.csv with the wall-clock column removed."""
    rows = list(csv.reader(path.open()))
    keep = [[c for i, c in enumerate(row) if rows[0][i] != "steps_per_s"]
            for row in rows]
    blob = "\n".join(",".join(r) for r in keep).encode()
    return hashlib.sha256(blob).hexdigest()


def _write_manifest(outdir: Path, mode: str, seed: int, cfg: dict,
                    switches: dict, inputs: dict, paper_scale: bool):
    artifacts = {}
    projection = {}
    for p in sorted(outdir.iterdir()):
        if p.name == "manifest.json" or not p.is_file():
            continue
        if p.name == "ablation.csv":
            projection[p.name] = _ablation_projection(p)
        else:
            artifacts[p.name] = _sha256(p)
    manifest = {
        "mode": mode,
        "seed": seed,
        "config": cfg,
        "switches": switches,
        "paper_scale": paper_scale,
        "inputs": inputs,
        "kernel_backend": kernel_backend,
        "artifacts": artifacts,
        "artifacts_projected": projection,
    }
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_loss_log(path: Path, log):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "cls", "reg", "lr"])
        for row in log:
            writer.writerow([row.step, repr(row.loss), repr(row.cls_term),
                             repr(row.reg_term), repr(row.lr)])


# -- modes -----------------------------------------------------------------------


def cmd_train(cfg: dict, seed: int, outdir: Path, switches: dict,
              paper_scale: bool) -> int:
    if any(switches.values()):
        raise UsageError("ablation switches are only valid in track/ablate modes")
    net = TrackerNet(_model_config(cfg, paper_scale, {}), seed=seed)
    log = train(net, _train_config(cfg), _world_config(cfg), seed=seed)
    save_checkpoint(outdir / "checkpoint.avmp", net.state_items())
    _write_loss_log(outdir / "loss_log.csv", log)
    return 0


def cmd_track(cfg: dict, seed: int, outdir: Path, switches: dict,
              paper_scale: bool, checkpoint: str | None, sequence: str | None,
              oracle_stub: bool) -> int:
    if sequence is None:
        raise UsageError("track mode requires --sequence")
    seq = load_sequence(sequence)
    icfg = _inference_config(cfg, switches)
    if oracle_stub:
        predictor = OraclePredictor(seq)
    else:
        if checkpoint is None:
            raise UsageError("track mode requires --checkpoint (or --oracle-stub)")
        net = TrackerNet(_model_config(cfg, paper_scale, switches), seed=seed)
        net.load_state(load_checkpoint(checkpoint))
        predictor = NetPredictor(net, icfg)
    boxes, diags = run_episode(predictor, seq, icfg)
    metrics = evaluate(boxes, seq.gt)

    (outdir / "metrics.json").write_text(
        json.dumps(metrics.as_flat_dict(), sort_keys=True) + "\n")
    with open(outdir / "diagnostics.jsonl", "w") as fh:
        for d in diags:
            fh.write(json.dumps(d.as_record(), sort_keys=True) + "\n")
    with open(outdir / "boxes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "x", "y", "w", "h"])
        for i, b in enumerate(boxes):
            writer.writerow([i, repr(b.x), repr(b.y), repr(b.w), repr(b.h)])
    return 0


def _eval_auc(net: TrackerNet, cfg: dict, icfg: InferenceConfig, seed: int
              ) -> tuple[float, int]:
    world = _world_config(cfg)
    aucs, failures = [], 0
    for i in range(cfg["eval"]["episodes"]):
        seq = generate_sequence(world, seed=seed + cfg["eval"]["seed_offset"] + i)
        boxes, _ = run_episode(NetPredictor(net, icfg), seq, icfg)
        m = evaluate(boxes, seq.gt)
        aucs.append(m.success_auc)
        failures += m.failures
    return float(np.mean(aucs)), failures


def cmd_ablate(cfg: dict, seed: int, outdir: Path, switches: dict,
               paper_scale: bool) -> int:
    rows = []
    for variant in cfg["ablate"]["variants"]:
        name = variant.get("name") or "variant"
        vsw = {k: bool(variant.get(k, False) or switches.get(k, False))
               for k in ("disable_jse", "disable_adaptor", "disable_cycletrack",
                         "disable_dfu", "plain_decoder")}
        net = TrackerNet(_model_config(cfg, paper_scale, vsw), seed=seed)
        t0 = time.perf_counter()
        train(net, _train_config(cfg), _world_config(cfg), seed=seed)
        elapsed = time.perf_counter() - t0
        steps = cfg["train"]["steps"]
        icfg = _inference_config(cfg, vsw)
        auc, failures = _eval_auc(net, cfg, icfg, seed)
        rows.append([name, repr(auc), failures,
                     repr(round(steps / elapsed, 3) if elapsed > 0 else 0.0)])
    with open(outdir / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "success_auc", "failures", "steps_per_s"])
        writer.writerows(rows)
    return 0


def cmd_gradcheck(cfg: dict, seed: int, outdir: Path, inject_bug: bool) -> int:
    g = cfg["gradcheck"]
    reports = run_block_checks(seeds=g["seeds"], eps=g["eps"], tol=g["tol"],
                               inject_bug=inject_bug)
    payload = {name: {"passed": r.passed, "max_error": r.max_error,
                      "eps": r.eps, "tol": r.tol}
               for name, r in reports.items()}
    (outdir / "gradcheck.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n")
    ok = True
    for name in REGISTRY:
        r = reports[name]
        print(f"{name:22s} {'PASS' if r.passed else 'FAIL'}  "
              f"max_rel_err={r.max_error:.3e}")
        ok &= r.passed
    return 0 if ok else 1


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="avtrack")
    ap.add_argument("--mode", choices=["train", "track", "ablate", "gradcheck"])
    ap.add_argument("--config", help="JSON config file")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--checkpoint")
    ap.add_argument("--sequence")
    ap.add_argument("--disable-jse", action="store_true")
    ap.add_argument("--disable-adaptor", action="store_true")
    ap.add_argument("--disable-cycletrack", action="store_true")
    ap.add_argument("--disable-dfu", action="store_true")
    ap.add_argument("--plain-decoder", action="store_true")
    ap.add_argument("--paper-scale", action="store_true")
    ap.add_argument("--oracle-stub", action="store_true")
    ap.add_argument("--inject-bug", action="store_true")
    ap.add_argument("--from-manifest", help="repeat a run recorded by a manifest")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.from_manifest:
            manifest = json.loads(Path(args.from_manifest).read_text())
            mode = manifest["mode"]
            seed = manifest["seed"]
            cfg = manifest["config"]
            switches = manifest["switches"]
            paper_scale = manifest["paper_scale"]
            inputs = manifest["inputs"]
        else:
            if not args.mode:
                raise UsageError("--mode is required (or --from-manifest)")
            mode = args.mode
            seed = args.seed
            user_cfg = {}
            if args.config:
                path = Path(args.config)
                if not path.exists():
                    raise UsageError(f"config file not found: {path}")
                user_cfg = json.loads(path.read_text())
            cfg = _merge_config(user_cfg)
            switches = {
                "disable_jse": args.disable_jse,
                "disable_adaptor": args.disable_adaptor,
                "disable_cycletrack": args.disable_cycletrack,
                "disable_dfu": args.disable_dfu,
                "plain_decoder": args.plain_decoder,
            }
            paper_scale = args.paper_scale
            inputs = {"checkpoint": args.checkpoint, "sequence": args.sequence,
                      "oracle_stub": args.oracle_stub, "inject_bug": args.inject_bug}

        if not args.out:
            raise UsageError("--out is required")
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)

        if mode == "train":
            rc = cmd_train(cfg, seed, outdir, switches, paper_scale)
        elif mode == "track":
            rc = cmd_track(cfg, seed, outdir, switches, paper_scale,
                           inputs.get("checkpoint"), inputs.get("sequence"),
                           bool(inputs.get("oracle_stub")))
        elif mode == "ablate":
            rc = cmd_ablate(cfg, seed, outdir, switches, paper_scale)
        elif mode == "gradcheck":
            rc = cmd_gradcheck(cfg, seed, outdir, bool(inputs.get("inject_bug")))
        else:
            raise UsageError(f"unknown mode {mode!r}")

        _write_manifest(outdir, mode, seed, cfg, switches, inputs, paper_scale)
        return rc
    except (UsageError, FileNotFoundError, CheckpointError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
