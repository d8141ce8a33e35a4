"""Joint encoder: patch embedding, shared position embedding, target-state
injection and the layer-wise backbone/adapter ladder.

The token sequence is ordered [train_1, ..., train_m, test]; the test frame
is always last. Position embeddings are added exactly once, right after
patch embedding; no attention block adds positional terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .attention import AttentionParams, FfnParams, ffn, plain_attention, zca
from .geometry import BBox
from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_rowvec,
    concat_rows,
    im2patches,
    layer_norm,
    matmul,
    slice_rows,
)


@dataclass(frozen=True)
class EncoderConfig:
    frame_side: int = 72          # H = W, pixels
    patch: int = 8                # p, pixels
    channels: int = 64            # C
    layers: int = 2               # L
    train_frames: int = 2         # m
    heads: int = 2                # N
    ffn_ratio: int = 2            # r

    def __post_init__(self):
        if self.frame_side % self.patch != 0:
            raise ShapeError(
                f"frame side {self.frame_side} must be divisible by patch {self.patch}")
        if self.train_frames < 1 or self.layers < 1:
            raise ValueError("need at least one training frame and one layer")

    @property
    def grid(self) -> int:
        return self.frame_side // self.patch

    @property
    def tokens_per_frame(self) -> int:
        return self.grid * self.grid

    @property
    def total_tokens(self) -> int:
        return (self.train_frames + 1) * self.tokens_per_frame

    @classmethod
    def paper_scale(cls) -> "EncoderConfig":
        return cls(frame_side=288, patch=16, channels=768, layers=2,
                   train_frames=2, heads=8, ffn_ratio=2)


# -- target-state supervision maps -------------------------------------------


def gaussian_label(bbox: BBox, config: EncoderConfig, sigma_factor: float = 0.25) -> Tensor:
    """Gaussian bump on the token grid, value 1 at the cell holding the box
    center, bandwidth sigma_factor * sqrt(box area in cells)."""
    if bbox.w <= 0 or bbox.h <= 0:
        raise ValueError(f"degenerate box {bbox}")
    g, p = config.grid, config.patch
    r0 = min(max(int(bbox.cy // p), 0), g - 1)
    c0 = min(max(int(bbox.cx // p), 0), g - 1)
    area_cells = (bbox.w / p) * (bbox.h / p)
    sigma = sigma_factor * math.sqrt(area_cells)
    rows = np.arange(g)[:, None]
    cols = np.arange(g)[None, :]
    d2 = (rows - r0) ** 2 + (cols - c0) ** 2
    return Tensor(np.exp(-d2 / (2.0 * sigma * sigma)))


def ltrb_prior(bbox: BBox, config: EncoderConfig) -> Tensor:
    """Signed distances from each cell center to the box edges, normalized by
    the frame side: [h, w, 4] ordered (left, top, right, bottom)."""
    if bbox.w <= 0 or bbox.h <= 0:
        raise ValueError(f"degenerate box {bbox}")
    g, p, side = config.grid, config.patch, config.frame_side
    cx = (np.arange(g) + 0.5) * p
    cy = (np.arange(g) + 0.5) * p
    out = np.empty((g, g, 4))
    out[:, :, 0] = (cx[None, :] - bbox.x1) / side
    out[:, :, 1] = (cy[:, None] - bbox.y1) / side
    out[:, :, 2] = (bbox.x2 - cx[None, :]) / side
    out[:, :, 3] = (bbox.y2 - cy[:, None]) / side
    return Tensor(out)


@dataclass
class TargetState:
    """Per-frame supervision: center label y [h,w] and LTRB prior d [h,w,4].

    Test frames carry all-zero maps so the encoder never sees the answer.
    """

    y: Tensor
    d: Tensor
    is_test: bool = False

    def __post_init__(self):
        g = self.y.data.shape[0]
        if self.y.data.shape != (g, g) or self.d.data.shape != (g, g, 4):
            raise ShapeError(f"state maps disagree: y {self.y.shape}, d {self.d.shape}")
        if self.is_test and (np.any(self.y.data) or np.any(self.d.data)):
            raise ValueError("test-frame state must be all zero")

    @classmethod
    def for_box(cls, bbox: BBox, config: EncoderConfig,
                sigma_factor: float = 0.25) -> "TargetState":
        return cls(y=gaussian_label(bbox, config, sigma_factor),
                   d=ltrb_prior(bbox, config), is_test=False)

    @classmethod
    def test_frame(cls, config: EncoderConfig) -> "TargetState":
        g = config.grid
        return cls(y=Tensor(np.zeros((g, g))), d=Tensor(np.zeros((g, g, 4))),
                   is_test=True)

    @classmethod
    def zero_template(cls, config: EncoderConfig) -> "TargetState":
        g = config.grid
        return cls(y=Tensor(np.zeros((g, g))), d=Tensor(np.zeros((g, g, 4))),
                   is_test=False)


# -- parameters ---------------------------------------------------------------


@dataclass
class PatchEmbedParams:
    w: Tensor  # [p*p*3, C]
    b: Tensor  # [1, C]

    @classmethod
    def init(cls, rng, config: EncoderConfig) -> "PatchEmbedParams":
        fan_in = config.patch * config.patch * 3
        return cls(
            w=Tensor(rng.normal(0.0, 1.0 / math.sqrt(fan_in), (fan_in, config.channels)),
                     requires_grad=True),
            b=Tensor(np.zeros((1, config.channels)), requires_grad=True),
        )

    def named_parameters(self, prefix):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


@dataclass
class JseParams:
    """Weight-shared target-state embedding: foreground vector plus a 4->C
    projection of the LTRB prior. The same instance serves every layer."""

    e_fg: Tensor     # [1, C]
    w_prior: Tensor  # [4, C]
    b_prior: Tensor  # [1, C]

    @classmethod
    def init(cls, rng, config: EncoderConfig) -> "JseParams":
        c = config.channels
        return cls(
            e_fg=Tensor(rng.normal(0.0, 0.02, (1, c)), requires_grad=True),
            w_prior=Tensor(rng.normal(0.0, 0.5, (4, c)), requires_grad=True),
            b_prior=Tensor(np.zeros((1, c)), requires_grad=True),
        )

    def named_parameters(self, prefix):
        yield f"{prefix}.e_fg", self.e_fg
        yield f"{prefix}.w_prior", self.w_prior
        yield f"{prefix}.b_prior", self.b_prior


@dataclass
class LayerNormParams:
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, c: int) -> "LayerNormParams":
        return cls(gamma=Tensor(np.ones(c), requires_grad=True),
                   beta=Tensor(np.zeros(c), requires_grad=True))

    def named_parameters(self, prefix):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


@dataclass
class VitLayerParams:
    """Pre-norm transformer layer: LN -> attention -> residual, LN -> FFN ->
    residual. Backbone attention is the conventional (non-centered) kind."""

    ln1: LayerNormParams
    attn: AttentionParams
    ln2: LayerNormParams
    ffn: FfnParams

    @classmethod
    def init(cls, rng, config: EncoderConfig) -> "VitLayerParams":
        c = config.channels
        return cls(ln1=LayerNormParams.init(c),
                   attn=AttentionParams.init(rng, c, config.heads),
                   ln2=LayerNormParams.init(c),
                   ffn=FfnParams.init(rng, c, config.ffn_ratio))

    def named_parameters(self, prefix):
        yield from self.ln1.named_parameters(f"{prefix}.ln1")
        yield from self.attn.named_parameters(f"{prefix}.attn")
        yield from self.ln2.named_parameters(f"{prefix}.ln2")
        yield from self.ffn.named_parameters(f"{prefix}.ffn")


@dataclass
class AdaptorParams:
    """Residual zero-centered cross-attention plus residual FFN."""

    attn: AttentionParams
    ffn: FfnParams

    @classmethod
    def init(cls, rng, config: EncoderConfig) -> "AdaptorParams":
        c = config.channels
        return cls(attn=AttentionParams.init(rng, c, config.heads),
                   ffn=FfnParams.init(rng, c, config.ffn_ratio))

    def named_parameters(self, prefix):
        yield from self.attn.named_parameters(f"{prefix}.attn")
        yield from self.ffn.named_parameters(f"{prefix}.ffn")


@dataclass
class EncoderParams:
    patch_embed: PatchEmbedParams
    pos: Tensor  # [h*w, C], shared across frames
    jse: JseParams
    vit_layers: list[VitLayerParams] = field(default_factory=list)
    adaptors: list[AdaptorParams] = field(default_factory=list)

    @classmethod
    def init(cls, rng, config: EncoderConfig) -> "EncoderParams":
        return cls(
            patch_embed=PatchEmbedParams.init(rng, config),
            pos=Tensor(rng.normal(0.0, 0.02, (config.tokens_per_frame, config.channels)),
                       requires_grad=True),
            jse=JseParams.init(rng, config),
            vit_layers=[VitLayerParams.init(rng, config) for _ in range(config.layers)],
            adaptors=[AdaptorParams.init(rng, config) for _ in range(config.layers)],
        )

    def named_parameters(self, prefix="encoder"):
        yield from self.patch_embed.named_parameters(f"{prefix}.patch_embed")
        yield f"{prefix}.pos", self.pos
        yield from self.jse.named_parameters(f"{prefix}.jse")
        for i, layer in enumerate(self.vit_layers):
            yield from layer.named_parameters(f"{prefix}.vit.{i}")
        for i, a in enumerate(self.adaptors):
            yield from a.named_parameters(f"{prefix}.adaptor.{i}")


# -- forward operations --------------------------------------------------------


def patch_embed(frame: Tensor, params: PatchEmbedParams, config: EncoderConfig) -> Tensor:
    side = config.frame_side
    if frame.data.shape != (side, side, 3):
        raise ShapeError(f"frame must be [{side},{side},3], got {frame.shape}")
    cols = im2patches(frame, config.patch)
    return add_rowvec(matmul(cols, params.w), params.b)


def add_position(tokens_per_frame: list[Tensor], pos: Tensor) -> Tensor:
    """Add the shared position embedding to each frame block, then concatenate
    in the given (train-first, test-last) order."""
    for t in tokens_per_frame:
        if t.data.shape != pos.data.shape:
            raise ShapeError(f"token block {t.shape} does not match pos {pos.shape}")
    return concat_rows([add(t, pos) for t in tokens_per_frame])


def split_frames(tokens: Tensor, config: EncoderConfig) -> list[Tensor]:
    """Inverse of the concatenation in add_position."""
    per = config.tokens_per_frame
    total = tokens.data.shape[0]
    if total % per != 0:
        raise ShapeError(f"token count {total} not a multiple of {per}")
    return [slice_rows(tokens, i * per, (i + 1) * per) for i in range(total // per)]


def jse(f: Tensor, states: list[TargetState], params: JseParams) -> Tensor:
    """Add [psi_1..psi_m, psi_test] + [phi_1..phi_m, phi_test] onto the token
    features; psi = y x e_fg per cell, phi = FC(d) per cell."""
    n_test = sum(1 for s in states if s.is_test)
    if n_test != 1:
        raise ValueError(f"exactly one test state required, got {n_test}")
    per = states[0].y.data.size
    if f.data.shape[0] != per * len(states):
        raise ShapeError(
            f"token count {f.data.shape[0]} != {len(states)} frames x {per} cells")
    blocks = []
    for s in states:
        y_col = Tensor(s.y.data.reshape(per, 1))
        d_flat = Tensor(s.d.data.reshape(per, 4))
        psi = matmul(y_col, params.e_fg)
        phi = add_rowvec(matmul(d_flat, params.w_prior), params.b_prior)
        blocks.append(add(psi, phi))
    return add(f, concat_rows(blocks))


def vit_layer(x: Tensor, params: VitLayerParams) -> Tensor:
    h = layer_norm(x, params.ln1.gamma, params.ln1.beta)
    x = add(x, plain_attention(h, h, h, params.attn))
    h = layer_norm(x, params.ln2.gamma, params.ln2.beta)
    return add(x, ffn(h, params.ffn))


def adaptor(f_avit: Tensor, f_hat: Tensor, params: AdaptorParams) -> Tensor:
    a = add(f_avit, zca(f_avit, f_hat, f_hat, params.attn))
    return add(a, ffn(a, params.ffn))


def avit_encode(frames: list[Tensor], states: list[TargetState],
                params: EncoderParams, config: EncoderConfig,
                use_jse: bool = True, use_adaptor: bool = True) -> Tensor:
    """Full encoder ladder; returns the adapted token features [T, C].

    With use_adaptor=False the ladder collapses to the state-embedded output
    of the last backbone layer; with use_jse=False the state injection is
    skipped (both are ablation switches).
    """
    if len(frames) != config.train_frames + 1:
        raise ShapeError(
            f"expected {config.train_frames + 1} frames, got {len(frames)}")
    if len(states) != len(frames):
        raise ValueError(f"{len(frames)} frames but {len(states)} states")
    if not states[-1].is_test or any(s.is_test for s in states[:-1]):
        raise ValueError("the test frame (and only it) must be last")

    def embed(t: Tensor) -> Tensor:
        return jse(t, states, params.jse) if use_jse else t

    tokens = [patch_embed(fr, params.patch_embed, config) for fr in frames]
    f_vit = add_position(tokens, params.pos)
    f_avit = embed(f_vit)
    for layer, adapt in zip(params.vit_layers, params.adaptors):
        f_vit = vit_layer(f_vit, layer)
        f_hat = embed(f_vit)
        f_avit = adaptor(f_avit, f_hat, adapt) if use_adaptor else f_hat
    return f_avit
