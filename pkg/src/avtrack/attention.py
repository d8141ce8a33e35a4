"""Multi-head attention blocks, plain and zero-centered, plus the FFN.

Zero-centered variants subtract the per-head token mean from the projected
queries and keys before the scaled dot product, which removes the constant
(DC) component of the token field; values are left untouched. No positional
terms are added inside any attention block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    add_rowvec,
    concat_cols,
    gelu,
    matmul,
    mean_axis0,
    no_grad,
    relu,
    scale,
    slice_cols,
    softmax_rows,
    sub_rowvec,
    transpose2d,
)


@dataclass
class AttentionParams:
    """Projection weights for one attention block ([C,C] each, bias-free)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    heads: int

    def __post_init__(self):
        c = self.wq.data.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).data.shape != (c, c):
                raise ShapeError(f"attention weight {name} must be square [C,C]")
        if self.heads < 1 or c % self.heads != 0:
            raise ShapeError(f"head count {self.heads} must divide width {c}")

    @property
    def width(self) -> int:
        return self.wq.data.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, c: int, heads: int) -> "AttentionParams":
        std = 1.0 / math.sqrt(c)
        mk = lambda: Tensor(rng.normal(0.0, std, (c, c)), requires_grad=True)
        return cls(wq=mk(), wk=mk(), wv=mk(), wo=mk(), heads=heads)

    def named_parameters(self, prefix: str):
        yield f"{prefix}.wq", self.wq
        yield f"{prefix}.wk", self.wk
        yield f"{prefix}.wv", self.wv
        yield f"{prefix}.wo", self.wo


@dataclass
class FfnParams:
    """Two-layer feed-forward: expand C -> r*C, contract back."""

    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    activation: str = "gelu"  # or "relu"

    @property
    def width(self) -> int:
        return self.w1.data.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, c: int, ratio: int,
             activation: str = "gelu") -> "FfnParams":
        hidden = ratio * c
        return cls(
            w1=Tensor(rng.normal(0.0, 1.0 / math.sqrt(c), (c, hidden)), requires_grad=True),
            b1=Tensor(np.zeros((1, hidden)), requires_grad=True),
            w2=Tensor(rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, c)), requires_grad=True),
            b2=Tensor(np.zeros((1, c)), requires_grad=True),
            activation=activation,
        )

    def named_parameters(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def _check_qkv(q: Tensor, k: Tensor, v: Tensor, c: int):
    if q.data.ndim != 2 or q.data.shape[1] != c:
        raise ShapeError(f"queries must be [q,{c}], got {q.shape}")
    if k.data.ndim != 2 or k.data.shape[1] != c:
        raise ShapeError(f"keys must be [k,{c}], got {k.shape}")
    if v.data.shape != k.data.shape[:1] + (c,):
        raise ShapeError(f"values {v.shape} must match keys {k.shape}")


def multihead(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams,
              centered: bool) -> Tensor:
    c = params.width
    _check_qkv(q, k, v, c)
    dk = c // params.heads
    inv_sqrt_dk = 1.0 / math.sqrt(dk)

    qp = matmul(q, params.wq)
    kp = matmul(k, params.wk)
    vp = matmul(v, params.wv)

    head_outs = []
    for h in range(params.heads):
        lo, hi = h * dk, (h + 1) * dk
        qh = slice_cols(qp, lo, hi)
        kh = slice_cols(kp, lo, hi)
        vh = slice_cols(vp, lo, hi)
        if centered:
            qh = sub_rowvec(qh, mean_axis0(qh))
            kh = sub_rowvec(kh, mean_axis0(kh))
        scores = scale(matmul(qh, transpose2d(kh)), inv_sqrt_dk)
        head_outs.append(matmul(softmax_rows(scores), vh))
    return matmul(concat_cols(head_outs), params.wo)


def zca(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams) -> Tensor:
    """Zero-centered cross-attention."""
    return multihead(q, k, v, params, centered=True)


def zsa(x: Tensor, params: AttentionParams) -> Tensor:
    """Zero-centered self-attention: queries, keys and values all from x."""
    return zca(x, x, x, params)


def plain_attention(q: Tensor, k: Tensor, v: Tensor, params: AttentionParams) -> Tensor:
    """Conventional softmax attention (used inside the backbone layers)."""
    return multihead(q, k, v, params, centered=False)


def attention_weights(q: Tensor, k: Tensor, params: AttentionParams,
                      centered: bool = True) -> list[np.ndarray]:
    """Per-head softmax weight matrices, for inspection in tests."""
    c = params.width
    dk = c // params.heads
    out = []
    with no_grad():
        qp = matmul(q, params.wq)
        kp = matmul(k, params.wk)
        for h in range(params.heads):
            lo, hi = h * dk, (h + 1) * dk
            qh = slice_cols(qp, lo, hi)
            kh = slice_cols(kp, lo, hi)
            if centered:
                qh = sub_rowvec(qh, mean_axis0(qh))
                kh = sub_rowvec(kh, mean_axis0(kh))
            scores = scale(matmul(qh, transpose2d(kh)), 1.0 / math.sqrt(dk))
            out.append(softmax_rows(scores).data)
    return out


def ffn(x: Tensor, params: FfnParams) -> Tensor:
    """contract(act(expand(x))); the caller adds the residual."""
    if x.data.ndim != 2 or x.data.shape[1] != params.width:
        raise ShapeError(f"ffn input must be [t,{params.width}], got {x.shape}")
    h = add_rowvec(matmul(x, params.w1), params.b1)
    if params.activation == "gelu":
        h = gelu(h)
    elif params.activation == "relu":
        h = relu(h)
    elif params.activation != "linear":
        raise ValueError(f"unknown ffn activation {params.activation!r}")
    return add_rowvec(matmul(h, params.w2), params.b2)
