"""Deterministic synthetic tracking world and evaluation metrics.

Frames are float64 RGB in [0,1]. Rendering is fully determined by
(config, seed): textured rectangles move linearly with optional jitter,
distractors share the target's texture through a similarity blend, and
occlusion events overdraw the target. Boxes are drawn at integer pixel
rectangles and the ground truth records exactly what was drawn.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels as K
from .geometry import BBox, center_distance, intersection_area, iou

FRAME_MAGIC = b"SYNF"
TEX = 16  # texture tile resolution

IOU_THRESHOLDS = np.round(np.arange(0.0, 1.0001, 0.05), 2)  # 21 thresholds


@dataclass(frozen=True)
class OcclusionEvent:
    start: int
    end: int  # exclusive
    coverage: float = 0.6


@dataclass(frozen=True)
class WorldConfig:
    frame_side: int = 72
    object_count: int = 2
    appearance_seed: int = 7
    distractor_similarity: float = 0.3
    speed: float = 1.2
    jitter: float = 0.0
    occlusion_events: tuple[OcclusionEvent, ...] = ()
    scale_drift: float = 0.0
    length: int = 40
    target_size: int = 16

    def __post_init__(self):
        if self.length < 1 or self.object_count < 1:
            raise ValueError("length and object_count must be >= 1")
        if not 0.0 <= self.distractor_similarity <= 1.0:
            raise ValueError("distractor_similarity must lie in [0,1]")


@dataclass
class Sequence:
    frames: list[np.ndarray]
    gt: list[BBox]
    events: list[dict] = field(default_factory=list)

    def __post_init__(self):
        if len(self.frames) != len(self.gt):
            raise ValueError(f"{len(self.frames)} frames vs {len(self.gt)} boxes")

    def __len__(self):
        return len(self.frames)


@dataclass
class Metrics:
    per_frame_iou: list[float]
    success_auc: float
    precision: float
    failures: int

    def as_flat_dict(self) -> dict[str, float]:
        return {
            "success_auc": self.success_auc,
            "precision": self.precision,
            "failures": float(self.failures),
            "mean_iou": float(np.mean(self.per_frame_iou)) if self.per_frame_iou else 0.0,
            "frames": float(len(self.per_frame_iou)),
        }


# -- rendering ----------------------------------------------------------------


def _smooth_noise(rng: np.random.Generator, side: int, cells: int = 6) -> np.ndarray:
    low = rng.uniform(0.0, 1.0, (cells, cells, 3))
    return K.bilinear_crop(low, 0.0, 0.0, cells / side, side)


def _texture(rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.1, 0.9, 3)
    noise = rng.uniform(-0.25, 0.25, (TEX, TEX, 3))
    return np.clip(base[None, None, :] + noise, 0.0, 1.0)


def _draw_rect(frame: np.ndarray, rect: tuple[int, int, int, int], tex: np.ndarray):
    x, y, w, h = rect
    side = frame.shape[0]
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, side), min(y + h, side)
    if x1 <= x0 or y1 <= y0:
        return
    ti = (np.arange(y0, y1) - y) * TEX // h
    tj = (np.arange(x0, x1) - x) * TEX // w
    frame[y0:y1, x0:x1] = tex[ti[:, None], tj[None, :]]


def _int_rect(cx: float, cy: float, size: float) -> tuple[int, int, int, int]:
    s = max(int(round(size)), 2)
    return int(round(cx - s / 2.0)), int(round(cy - s / 2.0)), s, s


def generate_sequence(config: WorldConfig, seed: int) -> Sequence:
    side = config.frame_side
    rng = np.random.default_rng(seed)
    tex_rng = np.random.default_rng(config.appearance_seed)

    background = _smooth_noise(tex_rng, side)
    target_tex = _texture(tex_rng)
    occluder_tex = np.full((TEX, TEX, 3), 0.5)
    sim = config.distractor_similarity
    distractor_texs = [
        np.clip((1.0 - sim) * _texture(tex_rng) + sim * target_tex, 0.0, 1.0)
        for _ in range(config.object_count - 1)
    ]

    sizes = [float(config.target_size)]
    sizes += [float(config.target_size) * rng.uniform(0.8, 1.2)
              for _ in range(config.object_count - 1)]
    margin = max(s for s in sizes) / 2.0 + 2.0
    pos = rng.uniform(margin, side - margin, (config.object_count, 2))
    angles = rng.uniform(0.0, 2.0 * np.pi, config.object_count)
    vel = np.stack([np.cos(angles), np.sin(angles)], axis=1) * config.speed

    frames: list[np.ndarray] = []
    gt: list[BBox] = []
    events: list[dict] = []

    for t in range(config.length):
        frame = background.copy()
        jit = rng.normal(0.0, config.jitter, (config.object_count, 2)) \
            if config.jitter > 0 else np.zeros((config.object_count, 2))
        draw_pos = pos + jit

        scale = (1.0 + config.scale_drift) ** t
        cur_sizes = [min(max(s * (scale if i == 0 else 1.0), 6.0), side / 2.0)
                     for i, s in enumerate(sizes)]

        # distractors under the target
        for i in range(1, config.object_count):
            rect = _int_rect(draw_pos[i, 0], draw_pos[i, 1], cur_sizes[i])
            _draw_rect(frame, rect, distractor_texs[i - 1])

        trect = _int_rect(draw_pos[0, 0], draw_pos[0, 1], cur_sizes[0])
        _draw_rect(frame, trect, target_tex)
        tbox = BBox(*map(float, trect)).clipped(side, side)

        for ev in config.occlusion_events:
            if ev.start <= t < ev.end:
                oside = tbox.w * np.sqrt(ev.coverage)
                orect = _int_rect(tbox.cx, tbox.cy, oside)
                _draw_rect(frame, orect, occluder_tex)
                obox = BBox(*map(float, orect)).clipped(side, side)
                covered = intersection_area(obox, tbox) / max(tbox.area, 1.0)
                events.append({"frame": t, "kind": "occlusion",
                               "coverage": round(covered, 6)})

        frames.append(frame)
        gt.append(tbox)

        # advance: reflect velocities so boxes stay inside the frame
        pos = pos + vel
        for i in range(config.object_count):
            half = cur_sizes[i] / 2.0
            for ax in range(2):
                if pos[i, ax] - half < 0:
                    pos[i, ax] = 2 * half - pos[i, ax]
                    vel[i, ax] = abs(vel[i, ax])
                elif pos[i, ax] + half > side:
                    pos[i, ax] = 2 * (side - half) - pos[i, ax]
                    vel[i, ax] = -abs(vel[i, ax])

    return Sequence(frames=frames, gt=gt, events=events)


# -- metrics -------------------------------------------------------------------


def evaluate(pred: list[BBox], gt: list[BBox], center_threshold: float = 20.0) -> Metrics:
    if len(pred) != len(gt):
        raise ValueError(f"{len(pred)} predictions vs {len(gt)} ground-truth boxes")
    ious = np.array([iou(p, g) for p, g in zip(pred, gt)])
    success = [(ious >= th).mean() for th in IOU_THRESHOLDS]
    auc = float(np.mean(success))
    dists = np.array([center_distance(p, g) for p, g in zip(pred, gt)])
    precision = float((dists <= center_threshold).mean()) if len(pred) else 0.0

    failures = 0
    in_run = False
    for v in ious:
        if v == 0.0 and not in_run:
            failures += 1
            in_run = True
        elif v > 0.0:
            in_run = False
    return Metrics(per_frame_iou=[float(v) for v in ious], success_auc=auc,
                   precision=precision, failures=failures)


# -- directory export / import --------------------------------------------------


def save_sequence(seq: Sequence, dirpath, config: WorldConfig | None = None):
    d = Path(dirpath)
    (d / "frames").mkdir(parents=True, exist_ok=True)
    if config is not None:
        lines = []
        for key, val in vars(config).items():
            if key == "occlusion_events":
                val = ";".join(f"{e.start}:{e.end}:{e.coverage}" for e in val)
            lines.append(f"{key} = {val}")
        (d / "config.txt").write_text("\n".join(lines) + "\n")
    with open(d / "gt.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "x", "y", "w", "h"])
        for i, b in enumerate(seq.gt):
            writer.writerow([i, repr(b.x), repr(b.y), repr(b.w), repr(b.h)])
    if seq.events:
        with open(d / "events.jsonl", "w") as fh:
            for ev in seq.events:
                fh.write(json.dumps(ev, sort_keys=True) + "\n")
    for i, frame in enumerate(seq.frames):
        h, w, c = frame.shape
        with open(d / "frames" / f"{i:05d}.raw", "wb") as fh:
            fh.write(FRAME_MAGIC)
            fh.write(struct.pack("<III", w, h, c))
            fh.write(np.ascontiguousarray(frame, dtype="<f8").tobytes())


def load_sequence(dirpath) -> Sequence:
    d = Path(dirpath)
    if not d.is_dir():
        raise FileNotFoundError(f"sequence directory not found: {d}")
    gt = []
    with open(d / "gt.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            gt.append(BBox(float(row["x"]), float(row["y"]),
                           float(row["w"]), float(row["h"])))
    frames = []
    for path in sorted((d / "frames").glob("*.raw")):
        blob = path.read_bytes()
        if blob[:4] != FRAME_MAGIC:
            raise ValueError(f"{path}: bad frame magic {blob[:4]!r}")
        w, h, c = struct.unpack_from("<III", blob, 4)
        frames.append(np.frombuffer(blob, dtype="<f8", offset=16)
                      .reshape(h, w, c).astype(np.float64))
    events = []
    ev_path = d / "events.jsonl"
    if ev_path.exists():
        events = [json.loads(line) for line in ev_path.read_text().splitlines() if line]
    return Sequence(frames=frames, gt=gt, events=events)
