"""``panosphere`` command line.

Exit codes: 0 success, 1 domain or I/O error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path


from . import __version__
from .alignment import AlignmentMode
from .curation import CurationConfig, build_manifest
from .embedding import build_sphere_embedding
from .geometry import ErpGrid, PerspectiveCamera
from .metrics import eval_dataset
from .pointcloud import compose_translated, distance_to_points, export_ply, import_ply
from .projection import e2p_sample, p2e_project, p2e_project_depth
from .raster import RasterKind, read_raster, write_raster
from .vit import ToyConfig, gradient_check, synthetic_sphere_scene
from .vit import forward as toy_forward

log = logging.getLogger("panosphere")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _write_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def cmd_project(args) -> int:
    if args.to == "erp":
        kind = RasterKind.RGB if args.kind == "rgb" else RasterKind.DISTANCE
        src = read_raster(args.input, kind).plane()
        cam = PerspectiveCamera.from_degrees(src.shape[1], src.shape[0], args.xfov, args.yfov,
                                             args.azimuth, args.polar)
        grid = ErpGrid(args.width, args.height)
        if args.kind == "rgb":
            erp, mask = p2e_project(src, cam, grid)
        else:
            valid = None if args.valid is None else read_raster(args.valid, RasterKind.MASK).plane()
            erp, mask = p2e_project_depth(src, cam, grid, valid=valid,
                                          is_distance=args.input_is_distance)
        write_raster(args.out, erp, kind)
        if args.mask_out:
            write_raster(args.mask_out, mask, RasterKind.MASK)
        log.info("covered %d of %d ERP pixels", int(mask.sum()), mask.size)
        return 0
    if args.cam_width is None or args.cam_height is None:
        raise ValueError("--to perspective needs --cam-width and --cam-height")
    raster = read_raster(args.input)
    cam = PerspectiveCamera.from_degrees(args.cam_width, args.cam_height, args.xfov, args.yfov,
                                         args.azimuth, args.polar)
    mode = "bilinear" if raster.kind == RasterKind.RGB else "nearest"
    mask = None if args.valid is None else read_raster(args.valid, RasterKind.MASK).plane()
    write_raster(args.out, e2p_sample(raster.plane(), cam, mode=mode, mask=mask), raster.kind)
    return 0


def cmd_curate(args) -> int:
    cfg = CurationConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.outpaint_cmd is not None:
        cfg.outpaint_cmd = args.outpaint_cmd or None
    if args.fill is not None:
        cfg.fill = args.fill
    summary = build_manifest(cfg, args.out, workers=args.workers)
    n = sum(summary["counts"].values())
    log.info("curated %d samples into %s", n, args.out)
    return 1 if summary["dataset_errors"] and n == 0 else 0


def cmd_embed(args) -> int:
    emb = build_sphere_embedding(args.hp, args.wp, args.dim)
    if args.out:
        write_raster(args.out, emb.matrix, RasterKind.EMBEDDING)
    _write_json(args.report, {"h_prime": emb.h_prime, "w_prime": emb.w_prime,
                              "dim": emb.dim, "coefficients": list(emb.coefficients),
                              "sha256": emb.checksum()})
    return 0


def _toy_config(path, seed) -> ToyConfig:
    cfg = ToyConfig.from_text(Path(path).read_text()) if path else ToyConfig()
    if seed is not None:
        cfg.seed = seed
    return cfg


def cmd_forward(args) -> int:
    cfg = _toy_config(args.config, args.seed)
    img = read_raster(args.input, RasterKind.RGB).plane()
    write_raster(args.out, toy_forward(img, cfg), RasterKind.DISTANCE)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _toy_config(args.config, args.seed)
    img, target = synthetic_sphere_scene(args.height, args.width, noise=0.05, seed=cfg.seed)
    report = gradient_check(cfg, img, target, eps=args.eps, tol=args.tol, loss=args.loss,
                            plain=args.plain)
    _write_json(args.out, report)
    return 0 if report["pass"] else 1


def _read_plane(path, kind):
    return read_raster(path, kind).plane()


def cmd_eval(args) -> int:
    manifest = Path(args.manifest)
    base = manifest.parent
    pairs = []
    for lineno, line in enumerate(manifest.read_text().splitlines(), 1):
        if not line.strip():
            continue
        entry = json.loads(line)
        try:
            pred = _read_plane(base / entry["pred_path"], RasterKind.DISTANCE)
            gt = _read_plane(base / entry["gt_path"], RasterKind.DISTANCE)
            mask = entry.get("mask_path")
            mask = None if mask is None else _read_plane(base / mask, RasterKind.MASK)
        except KeyError as exc:
            raise ValueError(f"{manifest}:{lineno}: missing field {exc}") from None
        pairs.append((pred, gt, mask))
    report = eval_dataset(pairs, AlignmentMode.parse(args.align),
                          rmse_literal=args.rmse_literal, pool_pixels=args.pool_pixels)
    _write_json(args.out, report.to_dict())
    table = report.table(manifest.stem)
    if args.table:
        Path(args.table).write_text(table + "\n")
    else:
        sys.stderr.write(table + "\n")
    return 0


def cmd_reconstruct(args) -> int:
    dist = _read_plane(args.distance, RasterKind.DISTANCE)
    rgb = None if args.rgb is None else read_raster(args.rgb, RasterKind.RGB).plane()
    mask = None if args.mask is None else _read_plane(args.mask, RasterKind.MASK)
    cloud = distance_to_points(dist, rgb, mask, stride=args.stride)
    export_ply(cloud, args.out, binary=args.binary)
    log.info("wrote %d points to %s", len(cloud), args.out)
    return 0


def cmd_compose(args) -> int:
    scene_path = Path(args.scene)
    scene = json.loads(scene_path.read_text())
    items = []
    for entry in scene:
        cloud_path = Path(entry["cloud_path"])
        if not cloud_path.is_absolute():
            cloud_path = scene_path.parent / cloud_path
        items.append((import_ply(cloud_path), entry.get("translation", [0.0, 0.0, 0.0])))
    export_ply(compose_translated(items), args.out, binary=args.binary)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="panosphere", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("project", help="perspective <-> equirectangular projection")
    p.add_argument("--input", required=True, help="source raster (.psr, or .png for rgb)")
    p.add_argument("--out", required=True, help="output raster path")
    p.add_argument("--to", choices=["erp", "perspective"], default="erp")
    p.add_argument("--kind", choices=["rgb", "depth"], default="rgb",
                   help="rgb is sampled bilinearly, depth nearest and converted to distance")
    p.add_argument("--xfov", type=float, required=True, help="horizontal FoV in degrees")
    p.add_argument("--yfov", type=float, help="vertical FoV in degrees (default xfov*H/W)")
    p.add_argument("--azimuth", type=float, default=0.0, help="optical-centre azimuth, degrees")
    p.add_argument("--polar", type=float, default=0.0, help="optical-centre polar offset, degrees")
    p.add_argument("--width", type=int, default=1024, help="ERP width")
    p.add_argument("--height", type=int, default=512, help="ERP height")
    p.add_argument("--cam-width", type=int, help="perspective width for --to perspective")
    p.add_argument("--cam-height", type=int, help="perspective height for --to perspective")
    p.add_argument("--valid", help="validity mask of the source (perspective depth, or ERP coverage)")
    p.add_argument("--input-is-distance", action="store_true",
                   help="depth input already stores radial distance")
    p.add_argument("--mask-out", help="write the coverage mask here")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("curate", help="build partial panoramas and a training manifest")
    p.add_argument("--config", required=True, help="curation config (JSON)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker threads (capped by PANOSPHERE_THREADS)")
    p.add_argument("--outpaint-cmd", help="command template with {in} {mask} {out}")
    p.add_argument("--fill", choices=["none", "nearest"], help="built-in offline filler")
    p.set_defaults(func=cmd_curate)

    p = sub.add_parser("embed", help="build the spherical embedding matrix")
    p.add_argument("--hp", type=int, required=True, help="patch rows H'")
    p.add_argument("--wp", type=int, required=True, help="patch columns W'")
    p.add_argument("--dim", type=int, required=True, help="embedding dim D (multiple of 4)")
    p.add_argument("--out", help="write the (H'W') x D matrix as an EMBEDDING raster")
    p.add_argument("--report", default="-", help="JSON summary path ('-' for stdout)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("forward", help="run the toy model on a panorama")
    p.add_argument("--input", required=True, help="RGB panorama")
    p.add_argument("--config", help="key=value model config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output distance raster")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("gradcheck", help="finite-difference check of the toy model")
    p.add_argument("--config", help="key=value model config")
    p.add_argument("--seed", type=int)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--eps", type=float, default=1e-3)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--loss", choices=["total", "quadratic"], default="total")
    p.add_argument("--plain", action="store_true",
                   help="also report finite differences taken across loss kinks")
    p.add_argument("--out", default="-", help="JSON report path ('-' for stdout)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="AbsRel / RMSE / delta metrics over a manifest")
    p.add_argument("--manifest", required=True,
                   help="JSON lines of {pred_path, gt_path, mask_path?}")
    p.add_argument("--align", choices=[m.value for m in AlignmentMode], default="median")
    p.add_argument("--rmse-literal", action="store_true",
                   help="use sqrt(sum err^2)/N instead of sqrt(mean err^2)")
    p.add_argument("--pool-pixels", action="store_true",
                   help="pool pixels across images instead of averaging per image")
    p.add_argument("--out", default="-", help="JSON report path ('-' for stdout)")
    p.add_argument("--table", help="write the text table here (default stderr)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reconstruct", help="distance panorama -> PLY point cloud")
    p.add_argument("--distance", required=True)
    p.add_argument("--rgb")
    p.add_argument("--mask")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--binary", action="store_true", help="binary little-endian PLY")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("compose", help="merge translated point clouds")
    p.add_argument("--scene", required=True, help="JSON list of {cloud_path, translation}")
    p.add_argument("--binary", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compose)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"panosphere {args.command}: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
