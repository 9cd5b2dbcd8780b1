"""Point clouds from panoramic distance maps, and PLY I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import cached_erp_directions


@dataclass
class PointCloud:
    points: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    # (rows, cols) of the source ERP pixels, when built from a raster
    pixels: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        for name in ("colors", "normals"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64).reshape(-1, 3)
                if len(arr) != n:
                    raise ValueError(f"{name} has {len(arr)} rows, points has {n}")
                setattr(self, name, arr)

    def __len__(self) -> int:
        return len(self.points)


def distance_to_points(dist, rgb=None, mask=None, stride: int = 1, normals=None) -> PointCloud:
    """Lift every ``stride``-th valid ERP pixel to ``dist * direction``.

    The source pixel indices are kept in ``cloud.pixels`` for re-projection.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    dist = np.asarray(dist, dtype=np.float64)
    h, w = dist.shape
    valid = np.isfinite(dist) & (dist > 0)
    if mask is not None:
        valid &= np.asarray(mask) > 0.5
    sub = np.zeros_like(valid)
    sub[::stride, ::stride] = True
    rows, cols = np.nonzero(valid & sub)
    dirs = cached_erp_directions(h, w)[rows, cols]
    points = dist[rows, cols, None] * dirs
    colors = None
    if rgb is not None:
        colors = np.clip(np.asarray(rgb, dtype=np.float64)[rows, cols], 0.0, 1.0)
    nrm = None if normals is None else np.asarray(normals, dtype=np.float64)[rows, cols]
    return PointCloud(points, colors, nrm, pixels=(rows, cols))


def compose_translated(clouds) -> PointCloud:
    """Concatenate ``(cloud, translation)`` pairs after shifting each cloud."""
    clouds = list(clouds)
    if not clouds:
        raise ValueError("compose_translated needs at least one cloud")
    points = [c.points + np.asarray(t, dtype=np.float64).reshape(1, 3) for c, t in clouds]
    def gather(attr):
        arrays = [getattr(c, attr) for c, _ in clouds]
        if all(a is None for a in arrays):
            return None
        if any(a is None for a in arrays):
            raise ValueError(f"cannot compose clouds where only some carry {attr}")
        return np.concatenate(arrays)
    return PointCloud(np.concatenate(points), gather("colors"), gather("normals"))


def _color_bytes(colors) -> np.ndarray:
    # round half up
    return np.floor(np.clip(colors, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def export_ply(cloud: PointCloud, path, *, binary: bool = False) -> None:
    path = Path(path)
    n = len(cloud)
    props = ["property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    if cloud.normals is not None:
        props += ["property float nx", "property float ny", "property float nz"]
    fmt = "binary_little_endian" if binary else "ascii"
    header = "\n".join(["ply", f"format {fmt} 1.0", f"element vertex {n}", *props,
                        "end_header"]) + "\n"
    try:
        if binary:
            fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
            if cloud.colors is not None:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            if cloud.normals is not None:
                fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
            rec = np.empty(n, dtype=fields)
            rec["x"], rec["y"], rec["z"] = cloud.points.T
            if cloud.colors is not None:
                rec["red"], rec["green"], rec["blue"] = _color_bytes(cloud.colors).T
            if cloud.normals is not None:
                rec["nx"], rec["ny"], rec["nz"] = cloud.normals.T
            with open(path, "wb") as fh:
                fh.write(header.encode("ascii"))
                fh.write(rec.tobytes())
            return
        lines = [header]
        # round to the declared float32 first; 9 digits then round-trip exactly
        cols = [cloud.points.astype(np.float32).astype(np.float64)]
        if cloud.colors is not None:
            cols.append(_color_bytes(cloud.colors))
        if cloud.normals is not None:
            cols.append(cloud.normals.astype(np.float32).astype(np.float64))
        for i in range(n):
            parts = [f"{v:.9g}" for v in cols[0][i]]
            j = 1
            if cloud.colors is not None:
                parts += [str(int(v)) for v in cols[j][i]]
                j += 1
            if cloud.normals is not None:
                parts += [f"{v:.9g}" for v in cols[j][i]]
            lines.append(" ".join(parts) + "\n")
        path.write_text("".join(lines))
    except OSError as exc:
        raise OSError(f"cannot write PLY {path}: {exc}") from exc


def import_ply(path) -> PointCloud:
    """Read a PLY written by :func:`export_ply` (ascii or binary little-endian)."""
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise ValueError(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii").splitlines()
    body = raw[end + len(b"end_header\n"):]
    fmt = next(line.split()[1] for line in header if line.startswith("format"))
    n = next(int(line.split()[2]) for line in header if line.startswith("element vertex"))
    props = [(line.split()[1], line.split()[2]) for line in header if line.startswith("property")]
    names = [name for _, name in props]
    if fmt == "ascii":
        text = body.decode("ascii").split()
        table = np.array(text, dtype=np.float64).reshape(n, len(names)) if n else \
            np.zeros((0, len(names)))
        # declared as float32; round the 9-digit text back to that precision
        col = {name: table[:, i].astype(np.float32 if typ == "float" else np.float64)
               .astype(np.float64) for i, (typ, name) in enumerate(props)}
    elif fmt == "binary_little_endian":
        dt = [(name, "u1" if typ == "uchar" else "<f4") for typ, name in props]
        rec = np.frombuffer(body, dtype=dt, count=n)
        col = {name: rec[name].astype(np.float64) for name in names}
    else:
        raise ValueError(f"{path}: unsupported PLY format {fmt}")
    points = np.stack([col["x"], col["y"], col["z"]], axis=-1)
    colors = normals = None
    if "red" in col:
        colors = np.stack([col["red"], col["green"], col["blue"]], axis=-1) / 255.0
    if "nx" in col:
        normals = np.stack([col["nx"], col["ny"], col["nz"]], axis=-1)
    return PointCloud(points, colors, normals)
