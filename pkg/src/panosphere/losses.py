"""Distance-to-normal operator and the training losses.

Gradients are written out by hand so the toy model can be trained and
checked against finite differences without an autodiff framework.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .alignment import (
    AlignmentError,
    median_align_backward,
    median_gradient_weights,
    median_scale,
    valid_pixels,
)
from .geometry import cached_erp_directions as _directions

# residuals below this magnitude get a zero L1 subgradient
L1_DEAD_ZONE = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_dis: float = 1.0
    lambda_nor: float = 2.0

    def __post_init__(self):
        if self.lambda_dis < 0 or self.lambda_nor < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_dis == 0 and self.lambda_nor == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class LossBranch:
    """The discrete choices that make the loss piecewise smooth.

    Freezing them turns the loss into one smooth function, which is what the
    analytic gradient differentiates.
    """

    median_weights: np.ndarray
    dis_sign: np.ndarray
    nor_sign: np.ndarray
    orientation: np.ndarray


@dataclass
class LossResult:
    total: float
    dis: float
    nor: float
    grad: np.ndarray | None = None
    branch: LossBranch | None = None


def latitude_weights(shape) -> np.ndarray:
    h, w = shape
    return np.broadcast_to(np.sin(math.pi * np.arange(h) / h)[:, None], (h, w))


@dataclass
class _NormalCache:
    t_u: np.ndarray
    t_v: np.ndarray
    n_hat: np.ndarray
    n_len: np.ndarray
    sign: np.ndarray
    valid: np.ndarray
    v_plus: np.ndarray
    v_minus: np.ndarray


def _normals(dist, mask, orientation=None):
    dist = np.asarray(dist, dtype=np.float64)
    h, w = dist.shape
    dirs = _directions(h, w)
    p = dist[..., None] * dirs
    rows = np.arange(h)
    v_plus = np.minimum(rows + 1, h - 1)
    v_minus = np.maximum(rows - 1, 0)
    t_u = np.roll(p, -1, axis=1) - np.roll(p, 1, axis=1)
    t_v = p[v_plus] - p[v_minus]
    n = np.cross(t_u, t_v)
    n_len = np.linalg.norm(n, axis=-1)

    ok = np.isfinite(dist) & (dist > 0)
    if mask is not None:
        ok &= np.asarray(mask) > 0.5
    valid = (ok & np.roll(ok, 1, axis=1) & np.roll(ok, -1, axis=1)
             & ok[v_plus] & ok[v_minus])
    # the top row sits on the pole, where the azimuthal tangent vanishes
    valid[0] = False
    scale = np.linalg.norm(t_u, axis=-1) * np.linalg.norm(t_v, axis=-1)
    valid &= n_len > 1e-12 * scale

    safe_len = np.where(valid, n_len, 1.0)
    n_hat = n / safe_len[..., None]
    # orient towards the camera at the origin
    if orientation is None:
        sign = np.where(np.sum(n_hat * p, axis=-1) > 0, -1.0, 1.0)
    else:
        sign = orientation
    normals = np.where(valid[..., None], sign[..., None] * n_hat, 0.0)
    cache = _NormalCache(t_u, t_v, n_hat, safe_len, sign, valid, v_plus, v_minus)
    return normals, valid, cache


def distance_to_normal(dist, mask=None):
    """Surface normals of an ERP distance map.

    Each pixel is lifted to ``dist * direction``; tangents are central
    differences along u (wrapping across the seam) and v (clamped at the
    borders), and the normal is their normalised cross product flipped to
    face the origin. Returns ``(normals, valid)``: an ``(H, W, 3)`` raster
    that is zero where invalid, and a boolean validity map. A pixel is
    invalid when any pixel of its stencil is masked out, on the pole row, or
    when the cross product degenerates.
    """
    normals, valid, _ = _normals(dist, mask)
    return normals, valid


def distance_to_normal_backward(cache: _NormalCache, grad_normals) -> np.ndarray:
    """Back-propagate a gradient on the normals to the distance raster."""
    g = np.where(cache.valid[..., None], grad_normals, 0.0) * cache.sign[..., None]
    n_hat = cache.n_hat
    g_n = (g - n_hat * np.sum(n_hat * g, axis=-1, keepdims=True)) / cache.n_len[..., None]
    g_tu = np.cross(cache.t_v, g_n)
    g_tv = np.cross(g_n, cache.t_u)
    g_p = np.roll(g_tu, 1, axis=1) - np.roll(g_tu, -1, axis=1)
    np.add.at(g_p, cache.v_plus, g_tv)
    np.subtract.at(g_p, cache.v_minus, g_tv)
    h, w = cache.valid.shape
    return np.sum(g_p * _directions(h, w), axis=-1)


def _weighted_l1(diff, omega, weights, want_grad, sign=None):
    if not omega.any():
        raise AlignmentError("loss needs at least one valid pixel")
    w = np.ones(omega.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    w = np.where(omega, w, 0.0)
    total_w = w.sum()
    absdiff = np.abs(diff)
    sub = np.sign(diff) * (absdiff >= L1_DEAD_ZONE) if sign is None else sign
    # on a frozen branch |r| is replaced by sign * r
    values = absdiff if sign is None else sign * diff
    per_pixel = values.sum(axis=-1) if diff.ndim == 3 else values
    loss = float(np.sum(np.where(omega, per_pixel, 0.0) * w) / total_w)
    if not want_grad:
        return loss, None
    scale = w / total_w
    grad = sub * (scale[..., None] if diff.ndim == 3 else scale)
    return loss, grad


def loss_dis(pred_aligned, gt, mask=None, *, latitude_weighting=False):
    """Mean absolute distance error over the valid pixels."""
    pred_aligned = np.asarray(pred_aligned, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    omega = valid_pixels(pred_aligned, gt, mask)
    weights = latitude_weights(gt.shape) if latitude_weighting else None
    diff = np.where(omega, pred_aligned - gt, 0.0)
    return _weighted_l1(diff, omega, weights, False)[0]


def loss_nor(pred_normals, gt_normals, mask=None, *, latitude_weighting=False):
    """Mean over valid pixels of the component-wise L1 distance between normals."""
    pred_normals = np.asarray(pred_normals, dtype=np.float64)
    gt_normals = np.asarray(gt_normals, dtype=np.float64)
    omega = np.ones(pred_normals.shape[:2], bool) if mask is None else np.asarray(mask) > 0.5
    weights = latitude_weights(omega.shape) if latitude_weighting else None
    diff = np.where(omega[..., None], pred_normals - gt_normals, 0.0)
    return _weighted_l1(diff, omega, weights, False)[0]


def angular_discrepancy(n1, n2) -> np.ndarray:
    return 1.0 - np.sum(np.asarray(n1) * np.asarray(n2), axis=-1)


def total_loss(pred, gt, mask=None, weights: LossWeights = LossWeights(), *,
               gt_normals=None, gt_normals_valid=None, latitude_weighting=False,
               return_grad=False, branch: LossBranch | None = None) -> LossResult:
    """Median-align ``pred`` and combine the distance and normal L1 losses.

    Ground-truth normals come from ``distance_to_normal(gt)`` unless
    ``gt_normals`` is given. With ``return_grad`` the result also carries
    d(total)/d(pred) and the branch it is valid on. Passing ``branch``
    evaluates the loss with those discrete choices held fixed.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    omega = valid_pixels(pred, gt, mask)
    if branch is None:
        k = median_scale(pred, gt, omega)
        median_w = median_gradient_weights(pred[omega]) if return_grad else None
    else:
        median_w = branch.median_weights
        k = float(np.median(gt[omega])) / float(np.dot(median_w, pred[omega]))
    aligned = pred * k
    lat = latitude_weights(gt.shape) if latitude_weighting else None

    r = np.where(omega, aligned - gt, 0.0)
    dis, g_dis = _weighted_l1(r, omega, lat, return_grad,
                              None if branch is None else branch.dis_sign)

    region = omega.astype(np.float64)
    n_pred, valid_pred, cache = _normals(aligned, region,
                                         None if branch is None else branch.orientation)
    if gt_normals is None:
        n_gt, valid_gt = distance_to_normal(gt, region)
    else:
        n_gt = np.asarray(gt_normals, dtype=np.float64)
        valid_gt = omega if gt_normals_valid is None else np.asarray(gt_normals_valid) > 0.5
    omega_n = valid_pred & valid_gt & omega
    diff = np.where(omega_n[..., None], n_pred - n_gt, 0.0)
    if omega_n.any():
        nor, g_nor = _weighted_l1(diff, omega_n, lat, return_grad,
                                  None if branch is None else branch.nor_sign)
    else:
        nor, g_nor = 0.0, (np.zeros(n_pred.shape) if return_grad else None)

    total = weights.lambda_dis * dis + weights.lambda_nor * nor
    result = LossResult(total, dis, nor)
    if return_grad:
        g_aligned = weights.lambda_dis * g_dis
        g_aligned = g_aligned + weights.lambda_nor * distance_to_normal_backward(cache, g_nor)
        result.grad = median_align_backward(pred, gt, omega, g_aligned, median_w)
        result.branch = LossBranch(
            median_w,
            np.sign(r) * (np.abs(r) >= L1_DEAD_ZONE),
            np.sign(diff) * (np.abs(diff) >= L1_DEAD_ZONE),
            cache.sign.copy(),
        )
    return result
