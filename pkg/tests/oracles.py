"""Slow, loop-level or brute-force reference implementations for the tests."""

import math

import numpy as np


def frustum_solid_angle_fraction(xfov, yfov, width=4096, height=2048):
    """Fraction of the sphere seen by an equator-centred pinhole camera.

    Rasterises the sphere at cell centres and tests each direction against
    the frustum planes directly, independent of the projection code.
    """
    theta = math.pi * (np.arange(height) + 0.5) / height
    phi = 2 * math.pi * (np.arange(width) + 0.5) / width
    st = np.sin(theta)[:, None]
    dx = st * np.sin(phi)[None, :]
    dy = np.cos(theta)[:, None] * np.ones((1, width))
    dz = st * np.cos(phi)[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inside = (dz > 0) & (np.abs(dx / dz) <= math.tan(xfov / 2)) \
            & (np.abs(dy / dz) <= math.tan(yfov / 2))
    w = np.broadcast_to(st, inside.shape)
    return float((w * inside).sum() / w.sum())


def rectangular_frustum_fraction(xfov, yfov):
    # solid angle of a rectangular pyramid, 4 asin(sin(a) sin(b))
    return 4 * math.asin(math.sin(xfov / 2) * math.sin(yfov / 2)) / (4 * math.pi)


def naive_metrics(pred, gt):
    """AbsRel, RMSE (root of mean), delta1, delta2 with plain Python loops, x100."""
    n = 0
    absrel = sq = 0.0
    d1 = d2 = 0
    for p, g in zip(np.ravel(pred), np.ravel(gt)):
        p, g = float(p), float(g)
        n += 1
        absrel += abs(p - g) / g
        sq += (p - g) ** 2
        ratio = max(p / g, g / p) if p > 0 else math.inf
        d1 += ratio < 1.25
        d2 += ratio < 1.25 ** 2
    return {"absrel": 100 * absrel / n, "rmse": 100 * math.sqrt(sq / n),
            "delta1": 100 * d1 / n, "delta2": 100 * d2 / n}


def naive_median(values):
    s = sorted(float(v) for v in values)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


def plane_distance(directions, c):
    """Distance along unit rays to the plane z = c (inf when not hit)."""
    with np.errstate(divide="ignore"):
        return np.where(directions[..., 2] > 0, c / directions[..., 2], np.inf)


def psnr(a, b, peak=1.0):
    mse = float(np.mean((np.asarray(a) - np.asarray(b)) ** 2))
    return math.inf if mse == 0 else 10 * math.log10(peak * peak / mse)
