"""Perspective RGB-depth pairs -> partial (optionally out-painted) panoramas.

A dataset root holds pairs named ``<stem>_rgb.psr`` (or ``<stem>_rgb.png``)
and ``<stem>_depth.psr``, with an optional ``<stem>_valid.psr`` mask. Each
pair is projected with a random optical-centre offset; RGB may then be handed
to an external out-painting command, distance never is.

Config file (JSON)::

    {
      "grid": [1024, 512],
      "azimuth_offset_deg": 30, "polar_offset_deg": 15,
      "seed": 0,
      "outpaint_cmd": null,            # e.g. "fill --in {in} --mask {mask} --out {out}"
      "outpaint_tolerance": 0.00784,   # mean |diff| allowed inside the mask (2/255)
      "fill": "none",                  # or "nearest": built-in offline filler
      "depth_is_distance": false,
      "datasets": [{"name": "HPS", "root": "data/hps", "xfov_deg": 60,
                    "sampling_probability": 16.59}]
    }
"""

from __future__ import annotations

import json
import logging
import math
import os
import shlex
import subprocess
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import ErpGrid, PerspectiveCamera
from .projection import coverage_fraction, p2e_project, p2e_project_depth
from .raster import RasterKind, read_raster, write_raster

log = logging.getLogger(__name__)

THREADS_ENV = "PANOSPHERE_THREADS"


@dataclass
class DatasetSpec:
    name: str
    root: str
    xfov_deg: float
    sampling_probability: float = 1.0
    yfov_deg: float | None = None

    def __post_init__(self):
        if self.sampling_probability < 0:
            raise ValueError(f"dataset {self.name}: sampling probability must be >= 0")


@dataclass
class CurationConfig:
    grid: ErpGrid = field(default_factory=lambda: ErpGrid(1024, 512))
    azimuth_offset_deg: float = 30.0
    polar_offset_deg: float = 15.0
    seed: int = 0
    outpaint_cmd: str | None = None
    outpaint_tolerance: float = 2.0 / 255.0
    outpaint_timeout_s: float = 600.0
    fill: str = "none"
    depth_is_distance: bool = False
    datasets: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "CurationConfig":
        raw = dict(raw)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown curation config keys: {sorted(unknown)}")
        if "grid" in raw:
            w, h = raw["grid"]
            raw["grid"] = ErpGrid(int(w), int(h))
        specs = []
        for entry in raw.get("datasets", []):
            entry = dict(entry)
            root = Path(entry["root"])
            if not root.is_absolute():
                entry["root"] = str(Path(base_dir) / root)
            specs.append(DatasetSpec(**entry))
        raw["datasets"] = specs
        cfg = cls(**raw)
        if cfg.fill not in ("none", "nearest"):
            raise ValueError(f"fill must be 'none' or 'nearest', got {cfg.fill!r}")
        return cfg

    @classmethod
    def load(cls, path) -> "CurationConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)


def normalize_probabilities(values) -> list[float]:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("no datasets to normalise")
    if any(v < 0 for v in values):
        raise ValueError("sampling probabilities must be non-negative")
    total = math.fsum(values)
    if total <= 0:
        raise ValueError("sampling probabilities sum to zero")
    return [v / total for v in values]


def sample_offsets(cfg: CurationConfig, rng) -> tuple[float, float]:
    """Uniform ``(azimuth, polar)`` optical-centre offsets in radians."""
    a = math.radians(cfg.azimuth_offset_deg)
    p = math.radians(cfg.polar_offset_deg)
    phi_c = float(rng.uniform(-a, a)) if a > 0 else 0.0
    theta_c = float(rng.uniform(-p, p)) if p > 0 else 0.0
    return phi_c, theta_c


def nearest_fill(rgb, mask) -> np.ndarray:
    """Fill unmasked ERP pixels with their nearest masked pixel, wrapping in azimuth."""
    rgb = np.asarray(rgb, dtype=np.float64)
    valid = np.asarray(mask) > 0.5
    if not valid.any():
        return rgb.copy()
    w = valid.shape[1]
    tiled = np.concatenate([valid, valid, valid], axis=1)
    _, (iy, ix) = ndimage.distance_transform_edt(~tiled, return_indices=True)
    iy = iy[:, w:2 * w]
    ix = ix[:, w:2 * w] % w
    return rgb[iy, ix]


def _run_outpaint(cmd_template, partial, mask, tolerance, timeout):
    """Run the external hook; return the full panorama or ``None`` on any failure."""
    with tempfile.TemporaryDirectory(prefix="panosphere-outpaint-") as tmp:
        tmp = Path(tmp)
        src, msk, out = tmp / "partial.psr", tmp / "mask.psr", tmp / "full.psr"
        write_raster(src, partial, RasterKind.RGB)
        write_raster(msk, mask, RasterKind.MASK)
        cmd = [part.format(**{"in": str(src), "mask": str(msk), "out": str(out)})
               for part in shlex.split(cmd_template)]
        try:
            proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            log.warning("out-paint command failed to run: %s", exc)
            return None
        if proc.returncode != 0:
            log.warning("out-paint command exited %d: %s", proc.returncode,
                        proc.stderr.strip()[-500:])
            return None
        candidates = [out, out.with_suffix(".png")]
        found = next((c for c in candidates if c.exists()), None)
        if found is None:
            log.warning("out-paint command wrote no output at %s", out)
            return None
        try:
            full = read_raster(found, RasterKind.RGB).plane()
        except ValueError as exc:
            log.warning("out-paint output unreadable: %s", exc)
            return None
    if full.shape != partial.shape:
        log.warning("out-paint output shape %s != %s", full.shape, partial.shape)
        return None
    inside = mask > 0.5
    err = float(np.mean(np.abs(full[inside] - partial[inside]))) if inside.any() else 0.0
    if err > tolerance:
        log.warning("out-paint output deviates inside the mask (mean |diff| %.4g > %.4g)",
                    err, tolerance)
        return None
    return full


def curate_one(rgb, depth, cam: PerspectiveCamera, cfg: CurationConfig, rng, *,
               out_dir=None, sample_id: str = "sample", source: str = "", valid=None):
    """Project one perspective pair onto the panorama grid.

    Returns ``(arrays, meta)`` where ``arrays`` holds ``rgb``, ``distance`` and
    ``mask`` rasters, or ``None`` when the projection covers nothing. When
    ``out_dir`` is given the rasters and ``meta`` are written there and the
    meta gains the file names.
    """
    rgb = np.asarray(rgb, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if rgb.shape[:2] != depth.shape[:2]:
        raise ValueError(f"rgb {rgb.shape[:2]} and depth {depth.shape[:2]} sizes differ")
    phi_c, theta_c = sample_offsets(cfg, rng)
    cam = cam.with_center(phi_c, theta_c)
    pano, _ = p2e_project(rgb, cam, cfg.grid)
    distance, mask = p2e_project_depth(depth, cam, cfg.grid, valid=valid,
                                       is_distance=cfg.depth_is_distance)
    if not mask.any():
        log.info("%s: projection is empty, skipped", sample_id)
        return None

    outpainted = False
    if cfg.outpaint_cmd:
        full = _run_outpaint(cfg.outpaint_cmd, pano, mask, cfg.outpaint_tolerance,
                             cfg.outpaint_timeout_s)
        if full is not None:
            pano, outpainted = full, True
    elif cfg.fill == "nearest":
        pano = nearest_fill(pano, mask)

    meta = {
        "sample_id": sample_id,
        "source": source,
        "camera": {
            "width": cam.width_px,
            "height": cam.height_px,
            "xfov_deg": math.degrees(cam.xfov_rad),
            "yfov_deg": math.degrees(cam.yfov_rad),
        },
        "offsets_rad": {"azimuth": phi_c, "polar": theta_c},
        "offsets_deg": {"azimuth": math.degrees(phi_c), "polar": math.degrees(theta_c)},
        "grid": [cfg.grid.width_px, cfg.grid.height_px],
        "outpainted": outpainted,
        "filled": (not outpainted) and cfg.fill != "none",
        "coverage": coverage_fraction(mask),
    }
    arrays = {"rgb": pano, "distance": distance, "mask": mask}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "rgb_pano": f"{sample_id}_rgb.psr",
            "distance_pano": f"{sample_id}_distance.psr",
            "mask": f"{sample_id}_mask.psr",
            "meta": f"{sample_id}_meta.json",
        }
        write_raster(out_dir / files["rgb_pano"], pano, RasterKind.RGB)
        write_raster(out_dir / files["distance_pano"], distance, RasterKind.DISTANCE)
        write_raster(out_dir / files["mask"], mask, RasterKind.MASK)
        meta["files"] = files
        (out_dir / files["meta"]).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return arrays, meta


def discover_pairs(root) -> list[tuple[str, Path, Path, Path | None]]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    pairs = []
    for depth_path in sorted(root.glob("*_depth.psr")):
        stem = depth_path.name[: -len("_depth.psr")]
        rgb_path = next((root / f"{stem}_rgb{ext}" for ext in (".psr", ".png")
                         if (root / f"{stem}_rgb{ext}").exists()), None)
        if rgb_path is None:
            log.warning("%s: no rgb file for %s, skipped", root, stem)
            continue
        valid_path = root / f"{stem}_valid.psr"
        pairs.append((stem, rgb_path, depth_path, valid_path if valid_path.exists() else None))
    return pairs


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _curate_job(job, cfg, out_dir):
    ds_index, sample_index, spec, stem, rgb_path, depth_path, valid_path = job
    rng = np.random.default_rng([cfg.seed, ds_index, sample_index])
    try:
        rgb = read_raster(rgb_path, RasterKind.RGB).plane()
        depth = read_raster(depth_path, RasterKind.DISTANCE).plane()
        valid = None if valid_path is None else read_raster(valid_path, RasterKind.MASK).plane()
        cam = PerspectiveCamera(
            depth.shape[1], depth.shape[0], math.radians(spec.xfov_deg),
            None if spec.yfov_deg is None else math.radians(spec.yfov_deg))
        sample_id = f"{spec.name}_{stem}"
        res = curate_one(rgb, depth, cam, cfg, rng, out_dir=Path(out_dir) / spec.name,
                         sample_id=sample_id, source=str(rgb_path), valid=valid)
    except (ValueError, OSError) as exc:
        log.warning("%s/%s: failed: %s", spec.name, stem, exc)
        return {"status": "error", "dataset": spec.name, "stem": stem, "error": str(exc)}
    if res is None:
        return {"status": "empty", "dataset": spec.name, "stem": stem}
    _, meta = res
    log.info("%s/%s: ok coverage=%.4f outpainted=%s", spec.name, stem, meta["coverage"],
             meta["outpainted"])
    return {"status": "ok", "dataset": spec.name, "stem": stem, "meta": meta}


def build_manifest(cfg: CurationConfig, out_dir, *, workers: int | None = None,
                   manifest_name: str = "manifest.jsonl") -> dict:
    """Curate every dataset and write a JSON-lines manifest in epoch order.

    Sampling probabilities are normalised over the datasets that resolve;
    each sample's weight is its dataset probability divided by the dataset's
    sample count. The line order is one seeded weighted draw without
    replacement. Returns a summary dict (also written as ``summary.json``).
    """
    if not cfg.datasets:
        raise ValueError("curation config lists no datasets")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    errors, jobs, resolved = [], [], []
    for ds_index, spec in enumerate(cfg.datasets):
        try:
            pairs = discover_pairs(spec.root)
        except FileNotFoundError as exc:
            log.error("dataset %s: %s", spec.name, exc)
            errors.append({"dataset": spec.name, "error": str(exc)})
            continue
        resolved.append(spec)
        for sample_index, (stem, rgb_path, depth_path, valid_path) in enumerate(pairs):
            jobs.append((ds_index, sample_index, spec, stem, rgb_path, depth_path, valid_path))
    if not resolved:
        raise ValueError("no dataset root could be resolved")
    probs = dict(zip([s.name for s in resolved],
                     normalize_probabilities([s.sampling_probability for s in resolved])))

    with ThreadPoolExecutor(max_workers=worker_count(workers)) as pool:
        results = list(pool.map(lambda job: _curate_job(job, cfg, out_dir), jobs))

    ok = [r for r in results if r["status"] == "ok"]
    counts = {}
    for r in ok:
        counts[r["dataset"]] = counts.get(r["dataset"], 0) + 1
    records = []
    for r in ok:
        meta = r["meta"]
        files = {k: f"{r['dataset']}/{v}" for k, v in meta["files"].items()}
        records.append({
            "dataset": r["dataset"],
            "sample_id": meta["sample_id"],
            **files,
            "dataset_probability": probs[r["dataset"]],
            "weight": probs[r["dataset"]] / counts[r["dataset"]],
            "outpainted": meta["outpainted"],
            "coverage": meta["coverage"],
        })
    if records:
        weights = np.array([rec["weight"] for rec in records])
        nonzero = int(np.count_nonzero(weights))
        rng = np.random.default_rng(cfg.seed)
        order = list(rng.choice(len(records), size=nonzero, replace=False,
                                p=weights / weights.sum()))
        order += [i for i in range(len(records)) if weights[i] == 0]
    else:
        order = []
    manifest = out_dir / manifest_name
    with open(manifest, "w") as fh:
        for rank, i in enumerate(order):
            fh.write(json.dumps({"order": rank, **records[i]}, sort_keys=True) + "\n")
    summary = {
        "manifest": manifest_name,
        "probabilities": probs,
        "counts": counts,
        "skipped_empty": [f"{r['dataset']}/{r['stem']}" for r in results if r["status"] == "empty"],
        "failed": [r for r in results if r["status"] == "error"],
        "dataset_errors": errors,
        "config": _config_summary(cfg),
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _config_summary(cfg: CurationConfig) -> dict:
    d = asdict(cfg)
    d["grid"] = [cfg.grid.width_px, cfg.grid.height_px]
    d["datasets"] = [{k: v for k, v in asdict(s).items() if k != "root"} for s in cfg.datasets]
    return d
