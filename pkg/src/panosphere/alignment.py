"""Scale and scale-and-shift alignment of predicted distance to ground truth."""

from __future__ import annotations

import enum

import numpy as np


class AlignmentError(ValueError):
    pass


class AlignmentMode(str, enum.Enum):
    NONE = "none"      # metric
    MEDIAN = "median"  # scale-invariant
    AFFINE = "affine"  # scale-and-shift invariant

    @classmethod
    def parse(cls, value) -> "AlignmentMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown alignment {value!r}; choose from {[m.value for m in cls]}"
            ) from None


def valid_pixels(pred, gt, mask=None) -> np.ndarray:
    """Boolean Omega: inside ``mask``, finite in both rasters and ``gt > 0``."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    ok = np.isfinite(pred) & np.isfinite(gt) & (gt > 0)
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape != gt.shape:
            raise ValueError(f"mask shape {mask.shape} != raster shape {gt.shape}")
        ok &= mask > 0.5
    return ok


def median_scale(pred, gt, omega) -> float:
    if not omega.any():
        raise AlignmentError("median alignment needs at least one valid pixel")
    m_pred = float(np.median(pred[omega]))
    m_gt = float(np.median(gt[omega]))
    if not (m_pred > 0 and m_gt > 0):
        raise AlignmentError(
            f"median alignment needs positive medians, got pred={m_pred}, gt={m_gt}")
    return m_gt / m_pred


def median_align(pred, gt, mask=None) -> np.ndarray:
    """Scale ``pred`` so its median over the valid pixels matches the ground truth's."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    omega = valid_pixels(pred, gt, mask)
    return pred * median_scale(pred, gt, omega)


def median_gradient_weights(values) -> np.ndarray:
    """d median / d values for a 1-D array, using a stable sort for ties."""
    values = np.asarray(values)
    n = values.size
    grad = np.zeros(n)
    order = np.argsort(values, kind="stable")
    if n % 2:
        grad[order[n // 2]] = 1.0
    else:
        grad[order[n // 2 - 1]] = 0.5
        grad[order[n // 2]] = 0.5
    return grad


def median_align_backward(pred, gt, omega, grad_aligned, median_weights=None) -> np.ndarray:
    """Gradient w.r.t. ``pred`` of a loss given its gradient w.r.t. the aligned raster.

    ``median_weights`` (d median / d pred over Omega) defaults to the stable-sort
    selection of :func:`median_gradient_weights`.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if median_weights is None:
        median_weights = median_gradient_weights(pred[omega])
    m_pred = float(np.dot(median_weights, pred[omega]))
    m_gt = float(np.median(np.asarray(gt)[omega]))
    k = m_gt / m_pred
    grad = k * grad_aligned
    through_median = -m_gt / (m_pred * m_pred) * float(np.sum(grad_aligned * pred))
    grad[omega] += through_median * median_weights
    return grad


def _affine_terms(pred, gt, mask):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    omega = valid_pixels(pred, gt, mask)
    if omega.sum() < 2:
        raise AlignmentError("affine alignment needs at least two valid pixels")
    p = pred[omega]
    g = gt[omega]
    p_mean = float(p.mean())
    g_mean = float(g.mean())
    pc = p - p_mean
    var = float(np.dot(pc, pc))
    if var <= 1e-24 * max(float(np.dot(p, p)), 1e-300):
        raise AlignmentError("affine alignment is singular for a constant prediction")
    a = float(np.dot(pc, g - g_mean)) / var
    return a, p_mean, g_mean


def affine_fit(pred, gt, mask=None) -> tuple[float, float]:
    """Least-squares ``(scale, shift)`` minimising ``sum (scale*(pred + shift) - gt)^2``.

    Solved as the equivalent ``a*pred + b`` problem, then ``scale = a`` and
    ``shift = b / a``. When the optimal ``a`` is exactly zero the shift is NaN.
    """
    a, p_mean, g_mean = _affine_terms(pred, gt, mask)
    b = g_mean - a * p_mean
    return a, (b / a if a != 0.0 else float("nan"))


def affine_align(pred, gt, mask=None) -> np.ndarray:
    a, p_mean, g_mean = _affine_terms(pred, gt, mask)
    # scale*(pred + shift) evaluated in centred form for accuracy
    return a * (np.asarray(pred, dtype=np.float64) - p_mean) + g_mean


def align(pred, gt, mask=None, mode=AlignmentMode.MEDIAN) -> np.ndarray:
    mode = AlignmentMode.parse(mode)
    if mode is AlignmentMode.MEDIAN:
        return median_align(pred, gt, mask)
    if mode is AlignmentMode.AFFINE:
        return affine_align(pred, gt, mask)
    return np.asarray(pred, dtype=np.float64).copy()
