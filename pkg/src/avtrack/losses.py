"""Training objective: hinged classification loss plus box-overlap
regression loss, weighted by lambda_cls."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import BBox
from .tensor import (
    ShapeError,
    Tensor,
    add,
    div,
    maximum,
    mean_all,
    minimum,
    mul,
    relu,
    reshape,
    scale,
    slice_cols,
    sub,
    take_rows,
)


@dataclass(frozen=True)
class LossConfig:
    lambda_cls: float = 200.0
    hinge_threshold: float = 0.05

    def __post_init__(self):
        if self.lambda_cls <= 0:
            raise ValueError("lambda_cls must be positive")
        if not 0.0 < self.hinge_threshold < 1.0:
            raise ValueError("hinge_threshold must lie in (0,1)")


def lbhinge(pred: Tensor, y: Tensor, t_h: float = 0.05) -> Tensor:
    """Squared error on foreground cells (y >= t_h); one-sided squared error
    against max(0, pred) on background, so negative background predictions
    cost nothing. Mean over cells."""
    if pred.data.shape != y.data.shape:
        raise ShapeError(f"pred {pred.shape} does not match label {y.shape}")
    if np.any(y.data < 0) or np.any(y.data > 1):
        raise ValueError("labels must lie in [0,1]")
    fg = Tensor((y.data >= t_h).astype(np.float64))
    bg = Tensor(1.0 - fg.data)
    e_fg = sub(pred, y)
    fg_term = mul(mul(e_fg, e_fg), fg)
    clipped = relu(pred)
    bg_term = mul(mul(clipped, clipped), bg)
    return mean_all(add(fg_term, bg_term))


def giou_loss(pred: BBox, gt: BBox) -> float:
    """1 - GIoU for a single box pair; range [0, 2]."""
    if gt.w <= 0 or gt.h <= 0:
        raise ValueError(f"ground-truth box has non-positive area: {gt}")
    if pred.w <= 0 or pred.h <= 0:
        raise ValueError(f"predicted box has non-positive area: {pred}")
    return 1.0 - geometry.giou(pred, gt)


def _cell_centers(grid: int, patch: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.divmod(idx, grid)
    return (cols + 0.5) * patch, (rows + 0.5) * patch


def giou_loss_map(ltrb_map: Tensor, y: Tensor, gt: BBox, frame_side: int,
                  patch: int, t_h: float = 0.05) -> Tensor:
    """Differentiable mean GIoU loss over the foreground cells of a dense
    LTRB map. Each selected cell's distances are decoded to a box around the
    cell center and compared with gt. Inverted predictions contribute zero
    intersection but keep a live gradient through the enclosing-box term."""
    grid = y.data.shape[0]
    if ltrb_map.data.shape != (grid, grid, 4):
        raise ShapeError(f"ltrb map {ltrb_map.shape} does not match label grid {grid}")
    if gt.w <= 0 or gt.h <= 0:
        raise ValueError(f"ground-truth box has non-positive area: {gt}")
    idx = np.flatnonzero(y.data.reshape(-1) >= t_h)
    if idx.size == 0:
        raise ValueError("no foreground cells: label never reaches the hinge threshold")

    cx, cy = _cell_centers(grid, patch, idx)
    k = idx.size
    flat = reshape(ltrb_map, (grid * grid, 4))
    rows = take_rows(flat, idx)                      # [k, 4] in normalized units
    dists = scale(rows, float(frame_side))           # pixels

    def col(i: int) -> Tensor:
        return slice_cols(dists, i, i + 1)

    cxt = Tensor(cx.reshape(k, 1))
    cyt = Tensor(cy.reshape(k, 1))
    x1 = sub(cxt, col(0))
    y1 = sub(cyt, col(1))
    x2 = add(cxt, col(2))
    y2 = add(cyt, col(3))

    def const(v: float) -> Tensor:
        return Tensor(np.full((k, 1), v))

    gx1, gy1, gx2, gy2 = const(gt.x1), const(gt.y1), const(gt.x2), const(gt.y2)
    area_p = mul(relu(sub(x2, x1)), relu(sub(y2, y1)))
    area_g = const(gt.area)
    iw = relu(sub(minimum(x2, gx2), maximum(x1, gx1)))
    ih = relu(sub(minimum(y2, gy2), maximum(y1, gy1)))
    inter = mul(iw, ih)
    union = sub(add(area_p, area_g), inter)
    ew = sub(maximum(x2, gx2), minimum(x1, gx1))
    eh = sub(maximum(y2, gy2), minimum(y1, gy1))
    enclosing = mul(ew, eh)
    giou = sub(div(inter, union), div(sub(enclosing, union), enclosing))
    return mean_all(sub(const(1.0), giou))


def total_loss(cls_map: Tensor, y: Tensor, ltrb_map: Tensor, gt: BBox,
               config: LossConfig, frame_side: int, patch: int) -> Tensor:
    """lambda * hinged classification + mean foreground GIoU. No L1 term."""
    cls_term = lbhinge(cls_map, y, config.hinge_threshold)
    reg_term = giou_loss_map(ltrb_map, y, gt, frame_side, patch,
                             config.hinge_threshold)
    return add(scale(cls_term, config.lambda_cls), reg_term)
