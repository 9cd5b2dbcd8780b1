"""Closed-form spherical and pinhole geometry.

Conventions used throughout the package:

* azimuth ``phi`` is measured from +z toward +x, ``phi = atan2(d_x, d_z)``
* polar ``theta`` is the colatitude from the +y axis, ``theta = arccos(d_y)``
* perspective pixels are centred with ``(W - 1) / 2`` while equirectangular
  (ERP) pixels are edge-scaled, ``phi = 2*pi*u / W`` and ``theta = pi*v / H``.

The two pixel conventions are deliberately asymmetric. Every function accepts
scalars or numpy arrays and broadcasts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class PerspectiveCamera:
    """Pinhole camera placed on the sphere at ``(center_azimuth, center_polar)``.

    ``yfov_rad`` may be left as ``None``; it is then derived from the
    horizontal FoV scaled by ``height / width``.
    """

    width_px: int
    height_px: int
    xfov_rad: float
    yfov_rad: float | None = None
    center_azimuth_rad: float = 0.0
    center_polar_rad: float = 0.0

    def __post_init__(self):
        if int(self.width_px) < 1 or int(self.height_px) < 1:
            raise ValueError(
                f"camera size must be positive, got {self.width_px}x{self.height_px}"
            )
        if self.yfov_rad is None:
            object.__setattr__(
                self, "yfov_rad", self.xfov_rad * self.height_px / self.width_px
            )
        for name in ("xfov_rad", "yfov_rad"):
            value = getattr(self, name)
            if not (0.0 < value < math.pi):
                raise ValueError(f"{name} must lie in (0, pi), got {value!r}")

    @classmethod
    def from_degrees(cls, width_px, height_px, xfov_deg, yfov_deg=None,
                     center_azimuth_deg=0.0, center_polar_deg=0.0):
        return cls(
            width_px,
            height_px,
            math.radians(xfov_deg),
            None if yfov_deg is None else math.radians(yfov_deg),
            math.radians(center_azimuth_deg),
            math.radians(center_polar_deg),
        )

    @property
    def fx(self) -> float:
        return focal_lengths(self)[0]

    @property
    def fy(self) -> float:
        return focal_lengths(self)[1]

    def with_center(self, azimuth_rad: float, polar_rad: float) -> "PerspectiveCamera":
        return PerspectiveCamera(self.width_px, self.height_px, self.xfov_rad,
                                 self.yfov_rad, azimuth_rad, polar_rad)


@dataclass(frozen=True)
class ErpGrid:
    width_px: int
    height_px: int

    def __post_init__(self):
        if self.width_px < 2 or self.height_px < 1:
            raise ValueError(
                f"ERP grid needs width >= 2 and height >= 1, got {self.width_px}x{self.height_px}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_px, self.width_px)


def focal_lengths(cam: PerspectiveCamera) -> tuple[float, float]:
    """Return ``(f_x, f_y)`` in pixels from the camera's field of view."""
    for name in ("xfov_rad", "yfov_rad"):
        value = getattr(cam, name)
        if not (0.0 < value < math.pi):
            raise ValueError(f"{name} must lie in (0, pi), got {value!r}")
    fx = cam.width_px / (2.0 * math.tan(cam.xfov_rad / 2.0))
    fy = cam.height_px / (2.0 * math.tan(cam.yfov_rad / 2.0))
    return fx, fy


def pixel_ray_unnormalized(cam: PerspectiveCamera, x, y) -> np.ndarray:
    """The un-normalised ray ``[(x - cx)/fx, (y - cy)/fy, 1]``, shape ``(..., 3)``."""
    fx, fy = focal_lengths(cam)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx = (x - (cam.width_px - 1) / 2.0) / fx
    dy = (y - (cam.height_px - 1) / 2.0) / fy
    dx, dy = np.broadcast_arrays(dx, dy)
    return np.stack([dx, dy, np.ones_like(dx)], axis=-1)


def pixel_ray(cam: PerspectiveCamera, x, y) -> np.ndarray:
    """Unit ray through perspective pixel ``(x, y)``; fractional pixels allowed."""
    d = pixel_ray_unnormalized(cam, x, y)
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def wrap_azimuth(phi):
    out = np.mod(phi, TWO_PI)
    # mod can return exactly 2*pi for tiny negative inputs
    return np.where(out >= TWO_PI, 0.0, out)


def ray_to_angles(d, cam: PerspectiveCamera | None = None, *, atol: float = 1e-9):
    """Map unit rays to ``(phi, theta)``, adding the camera's centre offsets.

    The offsets are added to the spherical angles directly rather than by
    rotating the ray, so large polar offsets are not a rigid rotation.
    Azimuth wraps into [0, 2pi); polar clamps into [0, pi].
    """
    d = np.asarray(d, dtype=np.float64)
    norm = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norm - 1.0) > atol):
        raise ValueError("ray_to_angles expects unit vectors")
    phi_c = 0.0 if cam is None else cam.center_azimuth_rad
    theta_c = 0.0 if cam is None else cam.center_polar_rad
    phi = np.arctan2(d[..., 0], d[..., 2]) + phi_c
    theta = np.arccos(np.clip(d[..., 1], -1.0, 1.0)) + theta_c
    return wrap_azimuth(phi), np.clip(theta, 0.0, math.pi)


def angles_to_direction(phi, theta) -> np.ndarray:
    """Unit direction for ``(phi, theta)``; inverse of :func:`ray_to_angles` without offsets."""
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    phi, theta = np.broadcast_arrays(phi, theta)
    st = np.sin(theta)
    return np.stack([st * np.sin(phi), np.cos(theta), st * np.cos(phi)], axis=-1)


def angles_to_erp_pixel(phi, theta, grid: ErpGrid):
    """Fractional ERP pixel ``(u, v)``; the caller rounds or interpolates."""
    u = np.asarray(phi, dtype=np.float64) / TWO_PI * grid.width_px
    v = np.asarray(theta, dtype=np.float64) / math.pi * grid.height_px
    return u, v


def erp_pixel_to_angles(u, v, grid: ErpGrid):
    phi = TWO_PI * np.asarray(u, dtype=np.float64) / grid.width_px
    theta = math.pi * np.asarray(v, dtype=np.float64) / grid.height_px
    return phi, theta


def erp_angle_field(grid: ErpGrid):
    """Per-pixel ``(phi, theta)`` arrays of shape ``(H, W)`` at integer pixel indices."""
    v, u = np.meshgrid(np.arange(grid.height_px, dtype=np.float64),
                       np.arange(grid.width_px, dtype=np.float64), indexing="ij")
    return erp_pixel_to_angles(u, v, grid)


def erp_directions(grid: ErpGrid) -> np.ndarray:
    """Unit directions of every ERP pixel, shape ``(H, W, 3)``."""
    return angles_to_direction(*erp_angle_field(grid))


@lru_cache(maxsize=16)
def cached_erp_directions(height: int, width: int) -> np.ndarray:
    """Read-only, memoised :func:`erp_directions` for an ``height x width`` grid."""
    d = erp_directions(ErpGrid(width, height))
    d.setflags(write=False)
    return d


def pixel_solid_angle_weights(grid: ErpGrid) -> np.ndarray:
    """Relative solid angle of each ERP row, ``sin(theta_v)``, broadcast to ``(H, W)``."""
    _, theta = erp_angle_field(grid)
    return np.sin(theta)
