"""Model predictor: query-refining decoder, discriminative target model and
the twin regression / classification heads."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attention import AttentionParams, FfnParams, ffn, multihead
from .encoder import EncoderConfig, LayerNormParams
from .geometry import BBox
from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_rowvec,
    concat_cols,
    conv3x3,
    gelu,
    layer_norm,
    matmul,
    mul_colvec,
    reshape,
    transpose2d,
)

BRANCHES = ("regression", "classification")


@dataclass
class DecoderLayerParams:
    self_attn: AttentionParams
    cross_attn: AttentionParams
    ffn: FfnParams

    @classmethod
    def init(cls, rng, c: int, heads: int, ratio: int) -> "DecoderLayerParams":
        return cls(self_attn=AttentionParams.init(rng, c, heads),
                   cross_attn=AttentionParams.init(rng, c, heads),
                   ffn=FfnParams.init(rng, c, ratio))

    def named_parameters(self, prefix):
        yield from self.self_attn.named_parameters(f"{prefix}.zsa")
        yield from self.cross_attn.named_parameters(f"{prefix}.zca")
        yield from self.ffn.named_parameters(f"{prefix}.ffn")


@dataclass
class DecoderParams:
    """D decoder layers refining one learnable query, then a fusion
    projection over the concatenated per-layer queries and a layer norm.

    dense_fusion=False (the plain-decoder ablation) fuses only the final
    query and uses conventional attention throughout.
    """

    e0: Tensor  # [1, C]
    layers: list[DecoderLayerParams]
    w_fuse: Tensor  # [D*C, C] dense, [C, C] plain
    b_fuse: Tensor  # [1, C]
    ln: LayerNormParams
    dense_fusion: bool = True
    zero_centered: bool = True

    def __post_init__(self):
        c = self.e0.data.shape[1]
        want = len(self.layers) * c if self.dense_fusion else c
        if self.w_fuse.data.shape != (want, c):
            raise ShapeError(
                f"fusion weight {self.w_fuse.shape} must be ({want},{c})")

    @classmethod
    def init(cls, rng, c: int, heads: int, ratio: int, depth: int = 4,
             dense_fusion: bool = True, zero_centered: bool = True) -> "DecoderParams":
        if depth < 1:
            raise ValueError("decoder needs at least one layer")
        fuse_in = depth * c if dense_fusion else c
        return cls(
            e0=Tensor(rng.normal(0.0, 0.02, (1, c)), requires_grad=True),
            layers=[DecoderLayerParams.init(rng, c, heads, ratio) for _ in range(depth)],
            w_fuse=Tensor(rng.normal(0.0, 1.0 / math.sqrt(fuse_in), (fuse_in, c)),
                          requires_grad=True),
            b_fuse=Tensor(np.zeros((1, c)), requires_grad=True),
            ln=LayerNormParams.init(c),
            dense_fusion=dense_fusion,
            zero_centered=zero_centered,
        )

    def named_parameters(self, prefix="decoder"):
        yield f"{prefix}.e0", self.e0
        for i, layer in enumerate(self.layers):
            yield from layer.named_parameters(f"{prefix}.layer.{i}")
        yield f"{prefix}.w_fuse", self.w_fuse
        yield f"{prefix}.b_fuse", self.b_fuse
        yield from self.ln.named_parameters(f"{prefix}.ln")


def df_dec(f: Tensor, params: DecoderParams) -> Tensor:
    """Refine the query through every decoder layer and fuse into the model
    weight vector [1, C]. Each layer re-derives its own self-attended copy of
    the encoded features from the same input f."""
    c = params.e0.data.shape[1]
    if f.data.ndim != 2 or f.data.shape[1] != c:
        raise ShapeError(f"decoder input must be [T,{c}], got {f.shape}")
    centered = params.zero_centered
    e = params.e0
    collected = []
    for layer in params.layers:
        f_hat = add(f, multihead(f, f, f, layer.self_attn, centered=centered))
        e_hat = add(e, multihead(e, f_hat, f_hat, layer.cross_attn, centered=centered))
        e = add(e_hat, ffn(e_hat, layer.ffn))
        collected.append(e)
    fused_in = concat_cols(collected) if params.dense_fusion else collected[-1]
    fused = add_rowvec(matmul(fused_in, params.w_fuse), params.b_fuse)
    return layer_norm(fused, params.ln.gamma, params.ln.beta)


def target_model(w: Tensor, f: Tensor) -> Tensor:
    """Score every token by its inner product with the model weight
    (a 1x1 convolution over the token grid): [T, C] -> [T, 1]."""
    if w.data.ndim != 2 or w.data.shape[0] != 1:
        raise ShapeError(f"model weight must be [1,C], got {w.shape}")
    if f.data.ndim != 2 or f.data.shape[1] != w.data.shape[1]:
        raise ShapeError(f"feature width {f.shape} does not match weight {w.shape}")
    return matmul(f, transpose2d(w))


def _conv_plan(c: int, out_dim: int) -> list[tuple[int, int]]:
    c2, c4 = max(c // 2, 1), max(c // 4, 1)
    widths = [c, c2, c4, c4, c4, out_dim]
    return list(zip(widths[:-1], widths[1:]))


@dataclass
class HeadBranchParams:
    w_fc: Tensor  # [C, C] weight transform of the model weight
    b_fc: Tensor  # [1, C]
    conv_ws: list[Tensor]  # five [3,3,ci,co]
    conv_bs: list[Tensor]  # five [co]

    @classmethod
    def init(cls, rng, c: int, out_dim: int, final_bias: float = 0.0,
             final_weight_scale: float = 1.0) -> "HeadBranchParams":
        ws, bs = [], []
        plan = _conv_plan(c, out_dim)
        for i, (ci, co) in enumerate(plan):
            std = 1.0 / math.sqrt(9 * ci)
            last = i == len(plan) - 1
            if last:
                std *= final_weight_scale
            ws.append(Tensor(rng.normal(0.0, std, (3, 3, ci, co)), requires_grad=True))
            bias = np.full(co, final_bias) if last else np.zeros(co)
            bs.append(Tensor(bias, requires_grad=True))
        return cls(
            w_fc=Tensor(rng.normal(0.0, 1.0 / math.sqrt(c), (c, c)), requires_grad=True),
            b_fc=Tensor(np.zeros((1, c)), requires_grad=True),
            conv_ws=ws, conv_bs=bs,
        )

    def named_parameters(self, prefix):
        yield f"{prefix}.w_fc", self.w_fc
        yield f"{prefix}.b_fc", self.b_fc
        for i, (w, b) in enumerate(zip(self.conv_ws, self.conv_bs)):
            yield f"{prefix}.conv.{i}.w", w
            yield f"{prefix}.conv.{i}.b", b


@dataclass
class HeadParams:
    """Two same-shaped branches with independent weights: regression emits a
    4-channel LTRB map, classification a 1-channel score map."""

    regression: HeadBranchParams
    classification: HeadBranchParams

    @classmethod
    def init(cls, rng, c: int) -> "HeadParams":
        # regression starts in a tight band around a valid box: predicted
        # distances that go negative early would park the overlap loss in a
        # zero-gradient region it cannot leave
        return cls(regression=HeadBranchParams.init(rng, c, 4, final_bias=0.25,
                                                    final_weight_scale=0.02),
                   classification=HeadBranchParams.init(rng, c, 1))

    def branch(self, name: str) -> HeadBranchParams:
        if name not in BRANCHES:
            raise ValueError(f"branch must be one of {BRANCHES}, got {name!r}")
        return self.regression if name == "regression" else self.classification

    def named_parameters(self, prefix="heads"):
        yield from self.regression.named_parameters(f"{prefix}.reg")
        yield from self.classification.named_parameters(f"{prefix}.cls")


def head_forward(w: Tensor, f_test: Tensor, params: HeadParams, branch: str,
                 grid: int) -> Tensor:
    """Branch pipeline: transform w, score tokens, gate the test features by
    the scores (token-wise scalar over channels) and run the conv stack."""
    bp = params.branch(branch)
    if f_test.data.shape[0] != grid * grid:
        raise ShapeError(f"test block {f_test.shape} does not cover a "
                         f"{grid}x{grid} grid")
    wb = add_rowvec(matmul(w, bp.w_fc), bp.b_fc)
    attn = target_model(wb, f_test)          # [hw, 1]
    gated = mul_colvec(f_test, attn)         # [hw, C]
    x = reshape(gated, (grid, grid, f_test.data.shape[1]))
    last = len(bp.conv_ws) - 1
    for i, (cw, cb) in enumerate(zip(bp.conv_ws, bp.conv_bs)):
        x = conv3x3(x, cw, cb)
        if i != last:
            x = gelu(x)
    return x


def decode_bbox(score_map: np.ndarray | Tensor, ltrb_map: np.ndarray | Tensor,
                config: EncoderConfig) -> tuple[BBox, float]:
    """Pick the argmax cell (row-major ties take the lowest index) and
    reconstruct its box in pixel coordinates. The score is the raw maximum
    and may exceed 1."""
    s = score_map.data if isinstance(score_map, Tensor) else score_map
    d = ltrb_map.data if isinstance(ltrb_map, Tensor) else ltrb_map
    g, p, side = config.grid, config.patch, config.frame_side
    flat = s.reshape(-1)
    idx = int(np.argmax(flat))
    r, c = divmod(idx, g)
    cx, cy = (c + 0.5) * p, (r + 0.5) * p
    l, t, rr, b = (float(v) * side for v in d.reshape(g, g, 4)[r, c])
    return BBox.from_corners(cx - l, cy - t, cx + rr, cy + b), float(flat[idx])
