"""Toy-scale training: chronological triplet sampling from synthetic
sequences, decoupled-weight-decay Adam, step-decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import TargetState, gaussian_label
from .losses import LossConfig, lbhinge, giou_loss_map
from .model import TrackerNet
from .synthworld import Sequence, WorldConfig, generate_sequence
from .tensor import Tensor, add, backward, scale, zero_grads


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    lr: float = 5e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # lr multiplied by decay_factor when passing each fraction of total steps
    decay_factor: float = 0.2
    decay_at: tuple[float, ...] = (0.5, 0.83)
    warmup_steps: int = 100
    clip_norm: float = 10.0
    sequence_pool: int = 6
    loss: LossConfig = field(default_factory=LossConfig)


class AdamW:
    """Adam with decoupled weight decay; no internal schedule."""

    def __init__(self, params: list[Tensor], cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float):
        cfg = self.cfg
        self.t += 1
        b1c = 1.0 - cfg.beta1 ** self.t
        b2c = 1.0 - cfg.beta2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g
            update = (self.m[i] / b1c) / (np.sqrt(self.v[i] / b2c) + cfg.adam_eps)
            p.assign_(p.data - lr * update - lr * cfg.weight_decay * p.data)


def lr_at(step: int, cfg: TrainConfig) -> float:
    lr = cfg.lr
    if cfg.warmup_steps > 0 and step < cfg.warmup_steps:
        lr *= (step + 1) / cfg.warmup_steps
    for frac in cfg.decay_at:
        if step >= frac * cfg.steps:
            lr *= cfg.decay_factor
    return lr


def clip_gradients(params: list[Tensor], max_norm: float) -> float:
    """Global-norm clipping; returns the pre-clip norm."""
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * factor
    return norm


@dataclass
class LossLogRow:
    step: int
    loss: float
    cls_term: float
    reg_term: float
    lr: float


def sample_triplet(rng: np.random.Generator, n_frames: int, m: int) -> list[int]:
    """m training indices plus one test index, strictly increasing."""
    idx = rng.choice(n_frames, size=m + 1, replace=False)
    return sorted(int(i) for i in idx)


def train(net: TrackerNet, cfg: TrainConfig, world: WorldConfig, seed: int,
          sequences: list[Sequence] | None = None) -> list[LossLogRow]:
    """Optimize the loss on sampled triplets; no center/scale jitter is ever
    applied (frames enter whole). Returns the per-step loss log."""
    enc = net.config.encoder
    m = enc.train_frames
    rng = np.random.default_rng(seed)
    if sequences is None:
        sequences = [generate_sequence(world, seed=seed * 1009 + i)
                     for i in range(cfg.sequence_pool)]
    for s in sequences:
        if len(s) < m + 1:
            raise ValueError("sequence too short for a training triplet")

    params = net.parameters()
    opt = AdamW(params, cfg)
    log: list[LossLogRow] = []
    for step in range(cfg.steps):
        seq = sequences[int(rng.integers(len(sequences)))]
        picks = sample_triplet(rng, len(seq), m)
        frames = [Tensor(seq.frames[i]) for i in picks]
        states = [TargetState.for_box(seq.gt[i], enc, net.config.sigma_factor)
                  for i in picks[:-1]]
        states.append(TargetState.test_frame(enc))
        gt = seq.gt[picks[-1]]

        cls_map, ltrb_map = net.forward_maps(frames, states)
        y = gaussian_label(gt, enc, net.config.sigma_factor)
        cls_term = lbhinge(cls_map, y, cfg.loss.hinge_threshold)
        reg_term = giou_loss_map(ltrb_map, y, gt, enc.frame_side, enc.patch,
                                 cfg.loss.hinge_threshold)
        loss = add(scale(cls_term, cfg.loss.lambda_cls), reg_term)

        zero_grads(params)
        backward(loss)
        clip_gradients(params, cfg.clip_norm)
        lr = lr_at(step, cfg)
        opt.step(lr)
        log.append(LossLogRow(step=step, loss=float(loss.data),
                              cls_term=float(cls_term.data),
                              reg_term=float(reg_term.data), lr=lr))
        if not math.isfinite(float(loss.data)):
            raise FloatingPointError(f"loss diverged at step {step}")
    return log
