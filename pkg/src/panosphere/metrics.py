"""Depth/distance evaluation metrics: AbsRel, RMSE, delta1, delta2.

All values are reported in percent. RMSE is the conventional
``sqrt(mean(err^2))`` by default; ``rmse_literal=True`` switches to
``sqrt(sum(err^2)) / |Omega|`` (mean taken outside the root), which is much
smaller for large images and is kept only for comparison.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .alignment import AlignmentMode, align, valid_pixels

log = logging.getLogger(__name__)

DELTA_BASE = 1.25


@dataclass
class MetricReport:
    absrel: float
    rmse: float
    delta1: float
    delta2: float
    n_valid: int
    alignment: str = AlignmentMode.MEDIAN.value
    n_images: int = 1
    n_failed: int = 0
    errors: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def table(self, name: str = "") -> str:
        head = f"{'':<16}{'AbsRel↓':>10}{'RMSE↓':>10}{'δ1↑':>10}{'δ2↑':>10}"
        row = (f"{name:<16}{self.absrel:>10.2f}{self.rmse:>10.2f}"
               f"{self.delta1:>10.2f}{self.delta2:>10.2f}")
        return head + "\n" + row


def _raw_metrics(aligned, gt, rmse_literal):
    err = aligned - gt
    n = err.size
    absrel = float(np.mean(np.abs(err) / gt))
    sq = float(np.sum(err * err))
    rmse = float(np.sqrt(sq) / n) if rmse_literal else float(np.sqrt(sq / n))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(gt / aligned, aligned / gt)
    ratio = np.where(aligned > 0, ratio, np.inf)
    d1 = float(np.mean(ratio < DELTA_BASE))
    d2 = float(np.mean(ratio < DELTA_BASE ** 2))
    return absrel, rmse, d1, d2


def eval_pair(pred, gt, mask=None, mode=AlignmentMode.MEDIAN, *,
              rmse_literal: bool = False) -> MetricReport:
    """Align ``pred`` per ``mode`` and score it against ``gt`` over the valid pixels."""
    mode = AlignmentMode.parse(mode)
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if mask is not None:
        inside = np.asarray(mask) > 0.5
        if np.any(inside & np.isfinite(gt) & (gt <= 0)):
            raise ValueError("ground truth must be positive inside the mask")
    omega = valid_pixels(pred, gt, mask)
    if not omega.any():
        raise ValueError("no valid pixels to evaluate")
    aligned = align(pred, gt, omega.astype(np.float64), mode)
    absrel, rmse, d1, d2 = _raw_metrics(aligned[omega], gt[omega], rmse_literal)
    return MetricReport(100 * absrel, 100 * rmse, 100 * d1, 100 * d2,
                        int(omega.sum()), mode.value)


def eval_dataset(pairs, mode=AlignmentMode.MEDIAN, *, rmse_literal: bool = False,
                 pool_pixels: bool = False) -> MetricReport:
    """Aggregate metrics over ``(pred, gt, mask)`` triples.

    By default each image is scored separately and the per-image metrics are
    averaged. ``pool_pixels`` instead aligns each image, pools every valid
    pixel and scores the pool once. Pairs that fail are skipped and listed in
    ``errors``.
    """
    mode = AlignmentMode.parse(mode)
    pairs = list(pairs)
    if not pairs:
        raise ValueError("eval_dataset needs at least one pair")
    reports, errors = [], []
    pooled_aligned, pooled_gt = [], []
    for index, (pred, gt, mask) in enumerate(pairs):
        try:
            report = eval_pair(pred, gt, mask, mode, rmse_literal=rmse_literal)
            if pool_pixels:
                omega = valid_pixels(pred, gt, mask)
                aligned = align(pred, gt, omega.astype(np.float64), mode)
                pooled_aligned.append(aligned[omega])
                pooled_gt.append(np.asarray(gt, dtype=np.float64)[omega])
        except ValueError as exc:
            log.warning("pair %d failed: %s", index, exc)
            errors.append({"index": index, "error": str(exc)})
            continue
        reports.append(report)
    if not reports:
        raise ValueError(f"all {len(pairs)} pairs failed")
    if pool_pixels:
        values = _raw_metrics(np.concatenate(pooled_aligned), np.concatenate(pooled_gt),
                              rmse_literal)
        absrel, rmse, d1, d2 = (100 * v for v in values)
    else:
        stack = np.array([[r.absrel, r.rmse, r.delta1, r.delta2] for r in reports])
        absrel, rmse, d1, d2 = (float(v) for v in stack.mean(axis=0))
    return MetricReport(absrel, rmse, d1, d2, sum(r.n_valid for r in reports),
                        mode.value, n_images=len(reports), n_failed=len(errors),
                        errors=errors)
