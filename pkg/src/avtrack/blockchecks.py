"""Registry of per-block gradient-check cases at toy shapes.

Each entry builds a deterministic scalar function plus the parameter list it
differentiates (inputs included), ready for gradcheck.grad_check. Cases with
piecewise-linear ops resample until every coordinate sits clear of the kink
by more than the finite-difference step.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .attention import AttentionParams, FfnParams, ffn, zca, zsa
from .encoder import (
    AdaptorParams,
    EncoderConfig,
    JseParams,
    PatchEmbedParams,
    TargetState,
    adaptor,
    gaussian_label,
    jse,
    patch_embed,
)
from .gradcheck import GradReport, grad_check
from .geometry import BBox
from .losses import LossConfig, giou_loss_map, lbhinge, total_loss
from .predictor import DecoderParams, HeadParams, df_dec, head_forward, target_model
from .tensor import Tensor, _make, layer_norm, sum_all

KINK_MARGIN = 1e-3

CaseBuilder = Callable[[int], tuple[Callable[[], Tensor], list[tuple[str, Tensor]]]]


def _t(rng, shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _away_from(values: np.ndarray, points: list[float], margin=KINK_MARGIN) -> np.ndarray:
    out = values.copy()
    for p in points:
        close = np.abs(out - p) < margin
        out[close] = p + margin * np.where(out[close] >= p, 1.5, -1.5)
    return out


def _case_zca(seed):
    rng = np.random.default_rng(seed)
    p = AttentionParams.init(rng, 6, 2)
    q, k, v = _t(rng, (3, 6)), _t(rng, (4, 6)), _t(rng, (4, 6))
    params = [("q", q), ("k", k), ("v", v)] + list(p.named_parameters("zca"))
    return (lambda: sum_all(zca(q, k, v, p))), params


def _case_zsa(seed):
    rng = np.random.default_rng(seed)
    p = AttentionParams.init(rng, 6, 2)
    x = _t(rng, (4, 6))
    return (lambda: sum_all(zsa(x, p))), [("x", x)] + list(p.named_parameters("zsa"))


def _case_ffn(seed):
    rng = np.random.default_rng(seed)
    p = FfnParams.init(rng, 4, 2)
    x = _t(rng, (3, 4))
    return (lambda: sum_all(ffn(x, p))), [("x", x)] + list(p.named_parameters("ffn"))


def _case_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, (3, 5))
    gamma = Tensor(rng.normal(1.0, 0.2, 5), requires_grad=True)
    beta = Tensor(rng.normal(0.0, 0.2, 5), requires_grad=True)
    return (lambda: sum_all(layer_norm(x, gamma, beta))), \
        [("x", x), ("gamma", gamma), ("beta", beta)]


def _case_patch_embed(seed):
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(frame_side=4, patch=2, channels=5, layers=1,
                        train_frames=1, heads=1, ffn_ratio=1)
    p = PatchEmbedParams.init(rng, cfg)
    frame = _t(rng, (4, 4, 3))
    return (lambda: sum_all(patch_embed(frame, p, cfg))), \
        [("frame", frame)] + list(p.named_parameters("pe"))


def _toy_states(cfg: EncoderConfig, rng) -> list[TargetState]:
    side = cfg.frame_side
    box = BBox(side * 0.2, side * 0.25, side * 0.45, side * 0.4)
    states = [TargetState.for_box(box, cfg) for _ in range(cfg.train_frames)]
    states.append(TargetState.test_frame(cfg))
    return states


def _case_jse(seed):
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(frame_side=4, patch=2, channels=6, layers=1,
                        train_frames=1, heads=1, ffn_ratio=1)
    p = JseParams.init(rng, cfg)
    f = _t(rng, (cfg.total_tokens, 6))
    states = _toy_states(cfg, rng)
    return (lambda: sum_all(jse(f, states, p))), \
        [("f", f)] + list(p.named_parameters("jse"))


def _case_adaptor(seed):
    rng = np.random.default_rng(seed)
    cfg = EncoderConfig(frame_side=4, patch=2, channels=6, layers=1,
                        train_frames=1, heads=2, ffn_ratio=1)
    p = AdaptorParams.init(rng, cfg)
    f_avit = _t(rng, (8, 6))
    f_hat = _t(rng, (8, 6))
    return (lambda: sum_all(adaptor(f_avit, f_hat, p))), \
        [("f_avit", f_avit), ("f_hat", f_hat)] + list(p.named_parameters("ad"))


def _case_dfdec_layer(seed):
    rng = np.random.default_rng(seed)
    p = DecoderParams.init(rng, 6, 2, 1, depth=1)
    f = _t(rng, (5, 6))
    return (lambda: sum_all(df_dec(f, p))), \
        [("f", f)] + list(p.named_parameters("dec"))


def _case_target_model(seed):
    rng = np.random.default_rng(seed)
    w = _t(rng, (1, 5))
    f = _t(rng, (4, 5))
    return (lambda: sum_all(target_model(w, f))), [("w", w), ("f", f)]


def _head_case(seed, branch):
    rng = np.random.default_rng(seed)
    heads = HeadParams.init(rng, 8)
    w = _t(rng, (1, 8))
    f_test = _t(rng, (9, 8))
    params = [("w", w), ("f_test", f_test)] + list(
        heads.branch(branch).named_parameters(branch))
    return (lambda: sum_all(head_forward(w, f_test, heads, branch, 3))), params


def _case_head_regression(seed):
    return _head_case(seed, "regression")


def _case_head_classification(seed):
    return _head_case(seed, "classification")


def _case_lbhinge(seed):
    rng = np.random.default_rng(seed)
    t_h = 0.05
    y = np.clip(_away_from(rng.uniform(0, 1, (3, 3)), [t_h]), 0.0, 1.0)
    pred = Tensor(_away_from(rng.normal(0.3, 0.5, (3, 3)), [0.0]),
                  requires_grad=True)
    y_t = Tensor(y)
    return (lambda: lbhinge(pred, y_t, t_h)), [("pred", pred)]


def _giou_inputs(seed, grid=3, patch=4):
    """LTRB map + label + gt box in general position: every min/max pair and
    every relu argument sits more than KINK_MARGIN from its kink."""
    rng = np.random.default_rng(seed)
    side = grid * patch
    cfg = EncoderConfig(frame_side=side, patch=patch, channels=4, layers=1,
                        train_frames=1, heads=1, ffn_ratio=1)
    rows_c = (np.arange(grid)[:, None] + 0.5) * patch
    cols_c = (np.arange(grid)[None, :] + 0.5) * patch
    for _ in range(256):
        gt = BBox(rng.uniform(1, 4), rng.uniform(1, 4),
                  rng.uniform(3, 6), rng.uniform(3, 6))
        y = gaussian_label(gt, cfg)
        ltrb = rng.uniform(0.05, 0.5, (grid, grid, 4))
        x1 = cols_c - ltrb[:, :, 0] * side
        y1 = rows_c - ltrb[:, :, 1] * side
        x2 = cols_c + ltrb[:, :, 2] * side
        y2 = rows_c + ltrb[:, :, 3] * side
        margins = [
            np.abs(x1 - gt.x1), np.abs(y1 - gt.y1),
            np.abs(x2 - gt.x2), np.abs(y2 - gt.y2),
            np.abs(np.minimum(x2, gt.x2) - np.maximum(x1, gt.x1)),
            np.abs(np.minimum(y2, gt.y2) - np.maximum(y1, gt.y1)),
            np.abs(x2 - x1), np.abs(y2 - y1),
        ]
        if min(m.min() for m in margins) > KINK_MARGIN:
            return Tensor(ltrb, requires_grad=True), y, gt, side, patch
    raise RuntimeError("could not find general-position giou inputs")


def _case_giou(seed):
    ltrb, y, gt, side, patch = _giou_inputs(seed)
    return (lambda: giou_loss_map(ltrb, y, gt, side, patch)), [("ltrb", ltrb)]


def _case_total_loss(seed):
    rng = np.random.default_rng(seed + 17)
    ltrb, y, gt, side, patch = _giou_inputs(seed)
    cfg = LossConfig(lambda_cls=7.0)
    pred = Tensor(_away_from(rng.normal(0.3, 0.5, y.data.shape), [0.0]),
                  requires_grad=True)
    return (lambda: total_loss(pred, y, ltrb, gt, cfg, side, patch)), \
        [("cls", pred), ("ltrb", ltrb)]


REGISTRY: dict[str, CaseBuilder] = {
    "zca": _case_zca,
    "zsa": _case_zsa,
    "ffn": _case_ffn,
    "layer_norm": _case_layer_norm,
    "patch_embed": _case_patch_embed,
    "jse": _case_jse,
    "adaptor_layer": _case_adaptor,
    "dfdec_layer": _case_dfdec_layer,
    "target_model": _case_target_model,
    "head_regression": _case_head_regression,
    "head_classification": _case_head_classification,
    "lbhinge": _case_lbhinge,
    "giou": _case_giou,
    "total_loss": _case_total_loss,
}


def _corrupt(t: Tensor) -> Tensor:
    """Identity forward with a deliberately wrong backward rule."""
    return _make(t.data.copy(), (t,), lambda g: (g * 1.01,))


def run_block_checks(seeds: int = 20, eps: float = 1e-5, tol: float = 1e-4,
                     inject_bug: bool = False,
                     blocks: list[str] | None = None) -> dict[str, GradReport]:
    """Run every registry entry over `seeds` seeds; worst error wins.

    inject_bug corrupts one gradient rule as a negative control: the run
    must then report a failure.
    """
    out: dict[str, GradReport] = {}
    names = blocks if blocks is not None else list(REGISTRY)
    for name in names:
        builder = REGISTRY[name]
        worst: dict[str, float] = {}
        for s in range(seeds):
            f, params = builder(1000 + s)
            if inject_bug and name == "ffn":
                inner = f
                f = lambda _inner=inner: sum_all(_corrupt(_inner()))
            rep = grad_check(f, params, eps=eps, tol=tol)
            for key, err in rep.errors.items():
                worst[key] = max(worst.get(key, 0.0), err)
        out[name] = GradReport(errors=worst, eps=eps, tol=tol)
    return out
