"""Training losses for the score, geometry and confidence heads, with analytic gradients.

Every loss is a pure function of numpy arrays.  ``*_grad`` companions return
the gradient with respect to the prediction argument, and :func:`grad_check`
compares them to central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

IOU_FLOOR = 1e-8


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 1.0
    lambda_: float = 10.0
    mu: float = 10.0
    epsilon: float = 1e-5
    smooth_l1_knee: float = 1.0
    reduction: str = "mean"  # over positive-mask pixels: "mean" or "sum"
    mask_conf: bool = True

    def __post_init__(self):
        for name in ("gamma", "lambda_", "mu", "epsilon", "smooth_l1_knee"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


def _reduce(values: np.ndarray, reduction: str) -> float:
    if values.size == 0:
        return 0.0
    return float(values.sum() if reduction == "sum" else values.mean())


def _reduce_grad(grad: np.ndarray, n: int, reduction: str) -> np.ndarray:
    return grad if reduction == "sum" or n == 0 else grad / n


# -- classification -----------------------------------------------------------

def dice_loss(pred, gt, epsilon: float = 1e-5) -> float:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    inter = (p * g).sum()
    return float(1.0 - 2.0 * inter / (p.sum() + g.sum() + epsilon))


def dice_grad(pred, gt, epsilon: float = 1e-5) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    denom = p.sum() + g.sum() + epsilon
    inter = (p * g).sum()
    return -2.0 * (g * denom - inter) / denom**2


# -- geometry -----------------------------------------------------------------

def _iou_parts(pred, gt):
    p = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    h_int = np.minimum(p[:, 0], g[:, 0]) + np.minimum(p[:, 1], g[:, 1])
    w_int = np.minimum(p[:, 2], g[:, 2]) + np.minimum(p[:, 3], g[:, 3])
    inter = w_int * h_int
    area_p = (p[:, 0] + p[:, 1]) * (p[:, 2] + p[:, 3])
    area_g = (g[:, 0] + g[:, 1]) * (g[:, 2] + g[:, 3])
    union = area_p + area_g - inter
    return p, g, h_int, w_int, inter, area_p, union


def iou_loss_per_pixel(pred, gt) -> np.ndarray:
    """-log IoU of the boxes implied by per-pixel distances (d_t, d_b, d_l, d_r).

    Both boxes share the pixel as origin, so their intersection extents are
    sums of the smaller distances.  IoU is floored at 1e-8 to keep disjoint
    boxes finite.
    """
    *_, inter, _, union = _iou_parts(pred, gt)
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    return -np.log(np.maximum(iou, IOU_FLOOR))


def iou_loss(pred, gt, reduction: str = "mean") -> float:
    return _reduce(iou_loss_per_pixel(pred, gt), reduction)


def iou_grad(pred, gt, reduction: str = "mean") -> np.ndarray:
    p, g, h_int, w_int, inter, area_p, union = _iou_parts(pred, gt)
    # d inter / d pred: only the active side of each min() carries gradient
    d_inter = np.stack(
        [
            np.where(p[:, 0] < g[:, 0], w_int, 0.0),
            np.where(p[:, 1] < g[:, 1], w_int, 0.0),
            np.where(p[:, 2] < g[:, 2], h_int, 0.0),
            np.where(p[:, 3] < g[:, 3], h_int, 0.0),
        ],
        axis=1,
    )
    wp = (p[:, 2] + p[:, 3])[:, None]
    hp = (p[:, 0] + p[:, 1])[:, None]
    d_area = np.concatenate([wp, wp, hp, hp], axis=1)
    # loss = log(union) - log(inter)
    live = (inter > 0) & (inter / np.where(union > 0, union, 1.0) > IOU_FLOOR)
    safe_inter = np.where(live, inter, 1.0)[:, None]
    grad = (d_area - d_inter) / union[:, None] - d_inter / safe_inter
    grad[~live] = 0.0
    grad = _reduce_grad(grad, len(p), reduction)
    return grad.reshape(np.shape(pred))


def angle_loss(pred, gt, reduction: str = "mean") -> float:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return _reduce(np.atleast_1d(1.0 - np.cos(d)), reduction)


def angle_grad(pred, gt, reduction: str = "mean") -> np.ndarray:
    d = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    return _reduce_grad(np.sin(d), max(d.size, 1), reduction)


# -- confidence ---------------------------------------------------------------

def smooth_l1(x, knee: float = 1.0) -> np.ndarray:
    a = np.abs(np.asarray(x, dtype=np.float64))
    return np.where(a < knee, 0.5 * a * a / knee, a - 0.5 * knee)


def conf_loss(pred, gt, knee: float = 1.0, mask=None, reduction: str = "mean") -> float:
    """Smooth-L1 between predicted and target confidences.

    ``mask`` selects pixels (broadcast over the channel axis when 2-D).
    """
    x = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    if mask is not None:
        x = x[_expand_mask(mask, x)]
    return _reduce(smooth_l1(x, knee), reduction)


def conf_grad(pred, gt, knee: float = 1.0, mask=None, reduction: str = "mean") -> np.ndarray:
    x = np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)
    g = np.where(np.abs(x) < knee, x / knee, np.sign(x))
    if mask is not None:
        m = _expand_mask(mask, x)
        g = np.where(m, g, 0.0)
        n = int(m.sum())
    else:
        n = x.size
    return _reduce_grad(g, n, reduction)


def _expand_mask(mask, x):
    m = np.asarray(mask) > 0
    if m.ndim == x.ndim - 1:
        m = np.broadcast_to(m[..., None], x.shape)
    return m


# -- combination --------------------------------------------------------------

def total_loss(parts: Mapping[str, float], cfg: LossConfig = LossConfig()) -> float:
    """cls + gamma * (iou + mu * angle) + lambda * conf."""
    geo = parts["iou"] + cfg.mu * parts["angle"]
    return parts["cls"] + cfg.gamma * geo + cfg.lambda_ * parts["conf"]


def map_losses(score_pred, score_gt, geo_pred, geo_gt, conf_pred, conf_gt, cfg: LossConfig = LossConfig()) -> dict:
    """All loss parts for one image given dense (H, W[, C]) arrays.

    Geometry terms are reduced over pixels where the GT score is positive;
    the confidence term too when ``cfg.mask_conf``.
    """
    sp = np.asarray(score_pred, dtype=np.float64).squeeze()
    sg = np.asarray(score_gt, dtype=np.float64).squeeze()
    pos = sg > 0
    gp = np.asarray(geo_pred, dtype=np.float64)[pos]
    gg = np.asarray(geo_gt, dtype=np.float64)[pos]
    parts = {
        "cls": dice_loss(sp, sg, cfg.epsilon),
        "iou": iou_loss(gp[:, :4], gg[:, :4], cfg.reduction),
        "angle": angle_loss(gp[:, 4], gg[:, 4], cfg.reduction) if len(gp) else 0.0,
        "conf": conf_loss(conf_pred, conf_gt, cfg.smooth_l1_knee, pos if cfg.mask_conf else None, cfg.reduction),
    }
    parts["total"] = total_loss(parts, cfg)
    return parts


# -- verification -------------------------------------------------------------

def finite_difference(fn: Callable[[np.ndarray], float], x, step: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of a scalar function of an array."""
    x0 = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = x0.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus = fn(x0)
        flat[i] = orig - step
        f_minus = fn(x0)
        flat[i] = orig
        gflat[i] = (f_plus - f_minus) / (2 * step)
    return grad


def grad_check(fn: Callable, grad_fn: Callable, x, step: float = 1e-4) -> float:
    """Max over inputs of |analytic - numeric| / max(1, |analytic|, |numeric|)."""
    analytic = np.asarray(grad_fn(np.array(x, dtype=np.float64)), dtype=np.float64)
    numeric = finite_difference(fn, x, step)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / scale))


def _far_from(rng, ref, lo, hi, gap=1e-2):
    # redraw coordinates that sit within `gap` of a min() kink
    x = rng.uniform(lo, hi, size=ref.shape)
    bad = np.abs(x - ref) < gap
    while bad.any():
        x[bad] = rng.uniform(lo, hi, size=int(bad.sum()))
        bad = np.abs(x - ref) < gap
    return x


def gradcheck_suite(n_points: int = 100, seed: int = 0, cfg: LossConfig = LossConfig()) -> dict[str, float]:
    """Worst relative gradient error per loss over seeded random points."""
    rng = np.random.default_rng(seed)
    worst = {"dice": 0.0, "iou": 0.0, "angle": 0.0, "conf": 0.0}
    for _ in range(n_points):
        gt = (rng.random(16) > 0.5).astype(np.float64)
        pred = rng.uniform(0.05, 0.95, 16)
        worst["dice"] = max(
            worst["dice"],
            grad_check(lambda p: dice_loss(p, gt, cfg.epsilon), lambda p: dice_grad(p, gt, cfg.epsilon), pred, 1e-3),
        )

        gt_d = rng.uniform(1.0, 10.0, (3, 4))
        pred_d = _far_from(rng, gt_d, 1.0, 10.0)
        worst["iou"] = max(worst["iou"], grad_check(lambda p: iou_loss(p, gt_d), lambda p: iou_grad(p, gt_d), pred_d))

        gt_a = rng.uniform(-np.pi / 2, np.pi / 2, 4)
        pred_a = rng.uniform(-np.pi / 2, np.pi / 2, 4)
        worst["angle"] = max(
            worst["angle"], grad_check(lambda p: angle_loss(p, gt_a), lambda p: angle_grad(p, gt_a), pred_a)
        )

        knee = cfg.smooth_l1_knee
        gt_c = rng.random((4, 5))
        # keep |pred - gt| away from the knee where smooth-L1 has a second-order kink
        offs = rng.uniform(-2 * knee, 2 * knee, gt_c.shape)
        offs = np.where(np.abs(np.abs(offs) - knee) < 1e-2, offs * 0.5, offs)
        pred_c = gt_c + offs
        worst["conf"] = max(
            worst["conf"],
            grad_check(lambda p: conf_loss(p, gt_c, knee), lambda p: conf_grad(p, gt_c, knee), pred_c),
        )
    return worst
