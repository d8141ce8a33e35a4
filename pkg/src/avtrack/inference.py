"""Online tracking pipeline: search-region crops, top-2 candidate
extraction, bidirectional backtrack verification and the dual template
update policy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .encoder import EncoderConfig, TargetState
from .geometry import BBox, iou
from .model import TrackerNet
from .predictor import decode_bbox
from .synthworld import Sequence
from .tensor import Tensor, no_grad


@dataclass(frozen=True)
class InferenceConfig:
    tau_c: float = 0.5
    tau_2: float = 0.85
    tau_1: float = 1.00
    scale_trigger: float = 16.0
    search_factor: float = 4.0
    mask_radius_cells: int = 1
    scale_measure: str = "area"  # or "side"
    enable_cycletrack: bool = True
    enable_dfu: bool = True

    def __post_init__(self):
        if not 0.0 < self.tau_c < self.tau_2 <= self.tau_1:
            raise ValueError("thresholds must satisfy 0 < tau_c < tau_2 <= tau_1")
        if self.scale_trigger <= 1.0:
            raise ValueError("scale_trigger must exceed 1")
        if self.scale_measure not in ("area", "side"):
            raise ValueError("scale_measure must be 'area' or 'side'")


@dataclass
class Candidate:
    box: BBox
    score: float
    grid_cell: tuple[int, int]

    def __post_init__(self):
        if not math.isfinite(self.score):
            raise ValueError("candidate score must be finite")


@dataclass
class Template:
    frame: np.ndarray
    box: BBox


@dataclass
class TrackState:
    """Mutable per-episode state owned by a single run_episode call."""

    template1: Template
    template2: Template | None
    last_box: BBox
    last_score: float
    initial_box_area: float
    previous_frame: np.ndarray
    template1_updates: int = 0
    template2_updates: int = 0
    last_t1_updated: bool = False
    last_t2_updated: bool = False

    @classmethod
    def initialize(cls, frame: np.ndarray, box: BBox) -> "TrackState":
        if box.w <= 0 or box.h <= 0:
            raise ValueError(f"annotated box is degenerate: {box}")
        return cls(template1=Template(frame, box), template2=None,
                   last_box=box, last_score=1.0, initial_box_area=box.area,
                   previous_frame=frame)


@dataclass
class StepDiagnostics:
    frame: int
    score: float
    backtrack_fired: bool = False
    corrected: bool = False
    template2_updated: bool = False
    template1_updated: bool = False

    def as_record(self) -> dict:
        return {
            "frame": self.frame,
            "score": round(self.score, 9),
            "backtrack_fired": self.backtrack_fired,
            "corrected": self.corrected,
            "template2_updated": self.template2_updated,
            "template1_updated": self.template1_updated,
        }


# -- search region -------------------------------------------------------------


@dataclass(frozen=True)
class CropMapping:
    """Affine map between crop pixels and frame pixels: frame = x0 + crop*scale."""

    x0: float
    y0: float
    scale: float

    def to_frame(self, box: BBox) -> BBox:
        return BBox(self.x0 + box.x * self.scale, self.y0 + box.y * self.scale,
                    box.w * self.scale, box.h * self.scale)

    def to_crop(self, box: BBox) -> BBox:
        return BBox((box.x - self.x0) / self.scale, (box.y - self.y0) / self.scale,
                    box.w / self.scale, box.h / self.scale)


def crop_search_region(frame: np.ndarray, center_box: BBox,
                       config: InferenceConfig, out_side: int
                       ) -> tuple[np.ndarray, CropMapping]:
    """Square crop of side search_factor * sqrt(box area), centered on the
    box, edge-padded and resampled to out_side pixels."""
    from . import _kernels as K

    if center_box.w <= 0 or center_box.h <= 0:
        raise ValueError(f"degenerate center box: {center_box}")
    side = config.search_factor * math.sqrt(center_box.area)
    x0 = center_box.cx - side / 2.0
    y0 = center_box.cy - side / 2.0
    scale = side / out_side
    crop = K.bilinear_crop(np.ascontiguousarray(frame), x0, y0, scale, out_side)
    return crop, CropMapping(x0=x0, y0=y0, scale=scale)


# -- candidate extraction --------------------------------------------------------


_MASKED = -1e30  # stands in for -inf so candidate scores stay finite


def top2_candidates(score_map: np.ndarray, ltrb_map: np.ndarray,
                    enc_config: EncoderConfig, mask_radius_cells: int = 1
                    ) -> tuple[Candidate, Candidate]:
    """Best candidate plus the sub-top response after suppressing every cell
    inside the winner's (dilated) box footprint."""
    g = enc_config.grid
    s = np.asarray(score_map, dtype=np.float64).reshape(g, g)
    box1, score1 = decode_bbox(s, ltrb_map, enc_config)
    idx1 = int(np.argmax(s.reshape(-1)))
    cell1 = (idx1 // g, idx1 % g)

    centers = (np.arange(g) + 0.5) * enc_config.patch
    inside_x = (centers >= box1.x1) & (centers <= box1.x2)
    inside_y = (centers >= box1.y1) & (centers <= box1.y2)
    mask = inside_y[:, None] & inside_x[None, :]
    mask[cell1] = True
    if mask_radius_cells > 0:
        r = mask_radius_cells
        dilated = np.zeros_like(mask)
        for di in range(-r, r + 1):
            for dj in range(-r, r + 1):
                src = mask[max(-di, 0):g - max(di, 0), max(-dj, 0):g - max(dj, 0)]
                dilated[max(di, 0):g - max(-di, 0), max(dj, 0):g - max(-dj, 0)] |= src
        mask = dilated

    masked = np.where(mask, _MASKED, s)
    box2, score2 = decode_bbox(masked, ltrb_map, enc_config)
    idx2 = int(np.argmax(masked.reshape(-1)))
    cell2 = (idx2 // g, idx2 % g)
    return (Candidate(box1, score1, cell1), Candidate(box2, score2, cell2))


# -- tracker-callable protocol ----------------------------------------------------


class TrackPredictor(Protocol):
    """Anything that, given a frame and a prior box, yields the top-2
    candidates. `frame_index` lets stub predictors address ground truth."""

    def top2(self, frame: np.ndarray, prior_box: BBox, state: TrackState,
             frame_index: int) -> tuple[Candidate, Candidate]: ...


class NetPredictor:
    """Real predictor: crops the templates and the search frame, runs the
    network, decodes candidates back to frame coordinates."""

    def __init__(self, net: TrackerNet, config: InferenceConfig):
        if net.config.encoder.train_frames != 2:
            raise ValueError("online tracking drives exactly two templates (m=2)")
        self.net = net
        self.config = config

    def _template_inputs(self, state: TrackState):
        enc = self.net.config.encoder
        sig = self.net.config.sigma_factor
        frames, states = [], []
        for tpl in (state.template1, state.template2):
            if tpl is None:
                frames.append(Tensor(np.zeros((enc.frame_side, enc.frame_side, 3))))
                states.append(TargetState.zero_template(enc))
                continue
            crop, mapping = crop_search_region(tpl.frame, tpl.box, self.config,
                                               enc.frame_side)
            frames.append(Tensor(crop))
            states.append(TargetState.for_box(mapping.to_crop(tpl.box), enc, sig))
        return frames, states

    def top2(self, frame, prior_box, state, frame_index):
        enc = self.net.config.encoder
        crop, mapping = crop_search_region(frame, prior_box, self.config,
                                           enc.frame_side)
        frames, states = self._template_inputs(state)
        frames.append(Tensor(crop))
        states.append(TargetState.test_frame(enc))
        with no_grad():
            cls_map, ltrb_map = self.net.forward_maps(frames, states)
        c1, c2 = top2_candidates(cls_map.data, ltrb_map.data, enc,
                                 self.config.mask_radius_cells)
        # candidate boxes feed backtrack crops, so they must stay usable even
        # when the raw LTRB decode is inverted or out of frame
        side = frame.shape[0]
        return (Candidate(_sanitize(mapping.to_frame(c1.box), side), c1.score,
                          c1.grid_cell),
                Candidate(_sanitize(mapping.to_frame(c2.box), side), c2.score,
                          c2.grid_cell))


class OraclePredictor:
    """Perfect stub: answers with the ground-truth box at score 1 while the
    pipeline (gating, updates, diagnostics) runs unchanged."""

    def __init__(self, sequence: Sequence):
        self.gt = sequence.gt

    def top2(self, frame, prior_box, state, frame_index):
        box = self.gt[frame_index]
        far = BBox(-1e4, -1e4, 1.0, 1.0)
        return (Candidate(box, 1.0, (0, 0)), Candidate(far, 0.0, (0, 0)))


# -- pipeline steps ----------------------------------------------------------------


def cycletrack_step(predictor: TrackPredictor, state: TrackState,
                    frame: np.ndarray, config: InferenceConfig,
                    frame_index: int) -> tuple[BBox, float, StepDiagnostics]:
    """One tracking step with backtrack verification.

    Forward track yields (B1,S1),(B2,S2). If S1 fails the confidence gate,
    both candidates are tracked backwards onto the previous frame; candidate
    2 replaces the output only when its backtrack both lands closer to the
    previous output AND clears the gate itself.
    """
    if state.previous_frame is None:
        raise ValueError("track state not initialized")
    diag = StepDiagnostics(frame=frame_index, score=0.0)
    cand1, cand2 = predictor.top2(frame, state.last_box, state, frame_index)
    out = cand1
    if cand1.score < config.tau_c and config.enable_cycletrack:
        diag.backtrack_fired = True
        back1, _ = predictor.top2(state.previous_frame, cand1.box, state,
                                  frame_index - 1)
        back2, _ = predictor.top2(state.previous_frame, cand2.box, state,
                                  frame_index - 1)
        iou1 = iou(back1.box, state.last_box)
        iou2 = iou(back2.box, state.last_box)
        if iou2 > iou1 and back2.score > config.tau_c:
            out = cand2
            diag.corrected = True
    diag.score = out.score
    return out.box, out.score, diag


def dual_frame_update(state: TrackState, frame: np.ndarray, box: BBox,
                      score: float, config: InferenceConfig) -> TrackState:
    """Refresh template2 on confident frames (score > tau_2); refresh
    template1 only on extremely confident frames (score > tau_1) whose box
    scale drifted beyond the trigger relative to the last template1 box."""
    state.last_t2_updated = False
    state.last_t1_updated = False
    if box.w <= 0 or box.h <= 0:
        raise ValueError(f"update box is degenerate: {box}")
    if score > config.tau_2:
        state.template2 = Template(frame, box)
        state.template2_updates += 1
        state.last_t2_updated = True
    ratio = box.area / state.initial_box_area
    if config.scale_measure == "side":
        ratio = math.sqrt(ratio)
    if score > config.tau_1 and (ratio > config.scale_trigger
                                 or ratio < 1.0 / config.scale_trigger):
        state.template1 = Template(frame, box)
        state.initial_box_area = box.area
        state.template1_updates += 1
        state.last_t1_updated = True
    return state


def _sanitize(box: BBox, frame_side: int) -> BBox:
    """Keep the running box usable as the next search prior."""
    w = min(max(box.w, 2.0), float(frame_side))
    h = min(max(box.h, 2.0), float(frame_side))
    cx = min(max(box.cx, 1.0), frame_side - 1.0)
    cy = min(max(box.cy, 1.0), frame_side - 1.0)
    return BBox.from_center(cx, cy, w, h)


def run_episode(predictor: TrackPredictor, sequence: Sequence,
                config: InferenceConfig) -> tuple[list[BBox], list[StepDiagnostics]]:
    """Track a whole sequence from its annotated first frame."""
    if len(sequence) == 0:
        raise ValueError("empty sequence")
    frame_side = sequence.frames[0].shape[0]
    state = TrackState.initialize(sequence.frames[0], sequence.gt[0])
    boxes = [sequence.gt[0]]
    diags = [StepDiagnostics(frame=0, score=state.last_score)]
    for t in range(1, len(sequence)):
        frame = sequence.frames[t]
        box, score, diag = cycletrack_step(predictor, state, frame, config, t)
        box = _sanitize(box, frame_side)
        if config.enable_dfu:
            dual_frame_update(state, frame, box, score, config)
            diag.template2_updated = state.last_t2_updated
            diag.template1_updated = state.last_t1_updated
        state.last_box = box
        state.last_score = score
        state.previous_frame = frame
        boxes.append(box)
        diags.append(diag)
    return boxes, diags
