"""Fixed sine-cosine spherical embedding of the ERP patch-grid angles.

Each patch cell ``(i, j)`` gets a D-dimensional row built from its azimuth and
polar angle. Row layout (D = 4 * D'):

    [sin(c_1 phi), cos(c_1 phi), ..., sin(c_D' phi), cos(c_D' phi),
     sin(c_1 theta), cos(c_1 theta), ..., sin(c_D' theta), cos(c_D' theta)]

i.e. angle-major, coefficient second, (sin, cos) innermost. Rows are ordered
``j * W' + i`` (row-major over the patch grid).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


def coefficient_series(d_prime: int, h_prime: int) -> np.ndarray:
    """Frequencies ``2 ** ((n - 1) * log2(H') / D')`` for ``n = 1..D'``."""
    if d_prime < 1:
        raise ValueError(f"D' must be >= 1, got {d_prime}")
    if h_prime < 2:
        raise ValueError(f"H' must be >= 2 for a non-degenerate series, got {h_prime}")
    n = np.arange(d_prime, dtype=np.float64)
    return np.exp2(n * math.log2(h_prime) / d_prime)


def embed_cell(phi, theta, coeffs) -> np.ndarray:
    """Embedding of one or many ``(phi, theta)`` pairs; output ``(..., 4 * len(coeffs))``."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)[..., None] * coeffs
    theta = np.asarray(theta, dtype=np.float64)[..., None] * coeffs
    blocks = [np.stack([np.sin(a), np.cos(a)], axis=-1) for a in (phi, theta)]
    out = np.stack(blocks, axis=-3)  # (..., 2, D', 2)
    return out.reshape(out.shape[:-3] + (-1,))


def patch_angle_field(h_prime: int, w_prime: int):
    """Angles at patch centres, each shaped ``(H', W')``.

    Evaluating the linear pixel->angle map at patch centres is identical to
    resizing the dense per-pixel field, for any patch size.
    """
    i = np.arange(w_prime, dtype=np.float64)
    j = np.arange(h_prime, dtype=np.float64)
    phi = 2.0 * math.pi * (i + 0.5) / w_prime
    theta = math.pi * (j + 0.5) / h_prime
    return np.meshgrid(phi, theta, indexing="xy")


@dataclass(frozen=True)
class SphericalEmbedding:
    matrix: np.ndarray = field(repr=False)
    h_prime: int
    w_prime: int
    coefficients: tuple

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def tokens(self) -> int:
        return self.matrix.shape[0]

    def checksum(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.matrix).tobytes()).hexdigest()


def _compute_embedding(h_prime: int, w_prime: int, dim: int) -> np.ndarray:
    if dim % 4 != 0:
        raise ValueError(f"embedding dim must be divisible by 4, got {dim}")
    if h_prime < 2 or w_prime < 2:
        raise ValueError(f"patch grid must be at least 2x2, got {h_prime}x{w_prime}")
    coeffs = coefficient_series(dim // 4, h_prime)
    phi, theta = patch_angle_field(h_prime, w_prime)
    return embed_cell(phi, theta, coeffs).reshape(h_prime * w_prime, dim)


@lru_cache(maxsize=32)
def _cached(h_prime: int, w_prime: int, dim: int) -> SphericalEmbedding:
    matrix = _compute_embedding(h_prime, w_prime, dim)
    matrix.setflags(write=False)
    coeffs = tuple(float(c) for c in coefficient_series(dim // 4, h_prime))
    return SphericalEmbedding(matrix, h_prime, w_prime, coeffs)


def build_sphere_embedding(h_prime: int, w_prime: int, dim: int, *,
                           use_cache: bool = True) -> SphericalEmbedding:
    """Build (or fetch from cache) the read-only embedding for a patch grid."""
    if use_cache:
        return _cached(int(h_prime), int(w_prime), int(dim))
    matrix = _compute_embedding(h_prime, w_prime, dim)
    matrix.setflags(write=False)
    coeffs = tuple(float(c) for c in coefficient_series(dim // 4, h_prime))
    return SphericalEmbedding(matrix, h_prime, w_prime, coeffs)
