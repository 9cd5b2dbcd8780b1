"""Perspective <-> equirectangular warping.

Both directions are inverse warps: every destination pixel computes where it
comes from and samples the source there. RGB is sampled bilinearly; depth and
masks use nearest-neighbour to avoid mixing across depth edges. Pixels outside
the camera frustum hold 0 in every output raster.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .geometry import (
    TWO_PI,
    ErpGrid,
    PerspectiveCamera,
    angles_to_direction,
    angles_to_erp_pixel,
    erp_pixel_to_angles,
    focal_lengths,
    pixel_ray,
    ray_to_angles,
)

log = logging.getLogger(__name__)

# column offsets closer than this to an integer are snapped, which makes
# integer azimuth rotations an exact column roll
_SNAP_TOL = 1e-9


def _as_hwc(img) -> tuple[np.ndarray, bool]:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img[..., None], True
    if img.ndim != 3:
        raise ValueError(f"expected an (H, W) or (H, W, C) raster, got shape {img.shape}")
    return img, False


def bilinear_sample(img, x, y, *, wrap_x: bool = False) -> np.ndarray:
    """Bilinearly sample ``img`` (H, W, C) at fractional pixel coordinates.

    ``x`` wraps modulo W when ``wrap_x`` is set, otherwise it clamps to the
    image; ``y`` always clamps.
    """
    img, squeeze = _as_hwc(img)
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)
    if wrap_x:
        x = np.mod(x, w)
    else:
        x = np.clip(x, 0.0, w - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    ax = (x - x0)[..., None]
    ay = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    if wrap_x:
        x0 = x0 % w
        x1 = (x0 + 1) % w
    else:
        x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    out = ((1 - ay) * ((1 - ax) * img[y0, x0] + ax * img[y0, x1])
           + ay * ((1 - ax) * img[y1, x0] + ax * img[y1, x1]))
    return out[..., 0] if squeeze else out


def nearest_sample(img, x, y, *, wrap_x: bool = False) -> np.ndarray:
    img, squeeze = _as_hwc(img)
    h, w = img.shape[:2]
    # floor(x + 0.5) rounds halves up, unlike np.round
    xi = np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)
    yi = np.clip(np.floor(np.asarray(y, dtype=np.float64) + 0.5).astype(np.int64), 0, h - 1)
    xi = xi % w if wrap_x else np.clip(xi, 0, w - 1)
    out = img[yi, xi]
    return out[..., 0] if squeeze else out


def _column_offset(cam: PerspectiveCamera, grid: ErpGrid) -> float:
    shift = cam.center_azimuth_rad / TWO_PI * grid.width_px
    nearest = round(shift)
    if abs(shift - nearest) < _SNAP_TOL:
        return float(nearest)
    return shift


def erp_to_camera_coords(cam: PerspectiveCamera, grid: ErpGrid):
    """Locate every ERP pixel in the camera image.

    Returns ``(x, y, inside, ray_norm)``, each shaped ``(H, W)``. ``x, y`` are
    fractional perspective pixel coordinates, ``inside`` is the frustum test
    and ``ray_norm`` is ``|d|`` of the un-normalised pinhole ray, i.e. the
    distance-per-unit-depth factor.
    """
    h, w = grid.height_px, grid.width_px
    v, u = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                       indexing="ij")
    # undo the additive centre offsets; azimuth in column units keeps integer
    # rotations exact
    du = np.mod(u - _column_offset(cam, grid), w)
    du = np.where(du >= w / 2.0, du - w, du)
    phi_local, theta = erp_pixel_to_angles(du, v, grid)
    theta_local = theta - cam.center_polar_rad
    d = angles_to_direction(phi_local, theta_local)
    fx, fy = focal_lengths(cam)
    with np.errstate(divide="ignore", invalid="ignore"):
        rx = d[..., 0] / d[..., 2]
        ry = d[..., 1] / d[..., 2]
    x = rx * fx + (cam.width_px - 1) / 2.0
    y = ry * fy + (cam.height_px - 1) / 2.0
    inside = (
        (theta_local >= 0.0) & (theta_local <= math.pi) & (d[..., 2] > 0.0)
        & (x >= -0.5) & (x <= cam.width_px - 0.5)
        & (y >= -0.5) & (y <= cam.height_px - 0.5)
    )
    ray_norm = np.sqrt(1.0 + rx * rx + ry * ry)
    x = np.where(inside, x, 0.0)
    y = np.where(inside, y, 0.0)
    ray_norm = np.where(inside, ray_norm, 0.0)
    return x, y, inside, ray_norm


def _empty_warning(inside, cam):
    if not inside.any():
        log.warning("camera at (%.4f, %.4f) rad covers no ERP pixel",
                    cam.center_azimuth_rad, cam.center_polar_rad)


def p2e_project(src, cam: PerspectiveCamera, grid: ErpGrid, *, mode: str = "bilinear"):
    """Warp a perspective raster onto the ERP grid.

    Returns ``(erp, mask)``; ``mask`` is 1.0 exactly where the frustum test
    passes and ``erp`` is 0 elsewhere.
    """
    src, squeeze = _as_hwc(src)
    if src.shape[:2] != (cam.height_px, cam.width_px):
        raise ValueError(
            f"source shape {src.shape[:2]} does not match camera "
            f"{cam.height_px}x{cam.width_px}")
    x, y, inside, _ = erp_to_camera_coords(cam, grid)
    _empty_warning(inside, cam)
    if mode == "bilinear":
        vals = bilinear_sample(src, x, y)
    elif mode == "nearest":
        vals = nearest_sample(src, x, y)
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    erp = np.where(inside[..., None], vals, 0.0)
    mask = inside.astype(np.float64)
    return (erp[..., 0] if squeeze else erp), mask


def p2e_project_depth(depth, cam: PerspectiveCamera, grid: ErpGrid, *, valid=None,
                      is_distance: bool = False):
    """Project a z-depth map to an ERP radial-distance map.

    Depth is sampled nearest-neighbour; the conversion factor ``|d|`` is taken
    at the exact fractional sample position so a fronto-parallel plane maps to
    its closed-form distance field. ``valid`` optionally marks usable source
    pixels; set ``is_distance`` when the source already stores radial distance.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.shape != (cam.height_px, cam.width_px):
        raise ValueError(f"depth shape {depth.shape} does not match camera")
    src_valid = np.ones(depth.shape, bool) if valid is None else np.asarray(valid) > 0.5
    bad = src_valid & ~(depth > 0.0)
    if bad.any():
        ys, xs = np.nonzero(bad)
        raise ValueError(
            f"{bad.sum()} non-positive depth values inside the valid region, "
            f"first at pixel (x={xs[0]}, y={ys[0]})")
    x, y, inside, ray_norm = erp_to_camera_coords(cam, grid)
    _empty_warning(inside, cam)
    z = nearest_sample(depth, x, y)
    ok = inside & (nearest_sample(src_valid.astype(np.float64), x, y) > 0.5)
    factor = 1.0 if is_distance else ray_norm
    dist = np.where(ok, z * factor, 0.0)
    return dist, ok.astype(np.float64)


def e2p_sample(src, cam: PerspectiveCamera, *, mode: str = "bilinear", mask=None) -> np.ndarray:
    """Render a perspective view of an ERP raster, wrapping across the u seam.

    With ``mask`` (1 where ``src`` holds data) bilinear weights are
    renormalised over valid samples so the 0 sentinel outside a partial
    panorama does not bleed in; pixels with no valid neighbour come out 0.
    """
    src, squeeze = _as_hwc(src)
    grid = ErpGrid(src.shape[1], src.shape[0])
    y, x = np.meshgrid(np.arange(cam.height_px, dtype=np.float64),
                       np.arange(cam.width_px, dtype=np.float64), indexing="ij")
    phi, theta = ray_to_angles(pixel_ray(cam, x, y), cam)
    u, v = angles_to_erp_pixel(phi, theta, grid)
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    sample = bilinear_sample if mode == "bilinear" else nearest_sample
    if mask is None:
        out = sample(src, u, v, wrap_x=True)
    else:
        m = (np.asarray(mask, dtype=np.float64) > 0.5).astype(np.float64)
        if m.shape != src.shape[:2]:
            raise ValueError(f"mask shape {m.shape} does not match source {src.shape[:2]}")
        num = sample(src * m[..., None], u, v, wrap_x=True)
        den = sample(m, u, v, wrap_x=True)[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(den > 1e-12, num / den, 0.0)
    return out[..., 0] if squeeze else out


def coverage_fraction(mask) -> float:
    """Solid-angle fraction of the sphere covered by an ERP mask."""
    mask = np.asarray(mask, dtype=np.float64)
    h = mask.shape[0]
    weights = np.sin(math.pi * np.arange(h) / h)[:, None]
    return float((mask * weights).sum() / (weights.sum() * mask.shape[1]))
