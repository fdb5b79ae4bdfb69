"""Command-line interface: render, synth, eval, oracle."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_synth(args) -> int:
    from . import dataio, scenegen

    spec = dataio.load_scene(args.scene)
    if args.frames is not None:
        from dataclasses import replace  # SceneSpec is a plain dataclass

        spec.frames = args.frames
    noise = None
    if args.noise_sigma > 0 or args.noise_dropout > 0:
        noise = scenegen.NoiseSpec(
            sigma=args.noise_sigma, dropout=args.noise_dropout, seed=args.noise_seed
        )
    dataio.export_dataset(args.out, spec, noise=noise, clean_depth=args.clean_depth)
    print(f"wrote {spec.frames} frames x {len(spec.cameras)} cameras to {args.out}")
    return 0


def _cmd_render(args) -> int:
    from .pipeline import load_config, run_sequence

    cfg = load_config(args.config)
    if args.dataset is not None:
        cfg.dataset_root = args.dataset
    if args.out is not None:
        cfg.output_dir = args.out
    if args.target is not None:
        cfg.target_camera_id = args.target
    if args.k is not None:
        cfg.k = args.k
    if args.blend is not None:
        cfg.blend_strategy = args.blend
    if args.frames is not None:
        cfg.frame_count = args.frames
    if args.no_temporal_filter:
        cfg.temporal_filter = False
    if args.no_temporal_tsdf:
        cfg.temporal_tsdf = False
    summary = run_sequence(cfg)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    from . import metrics
    from .dataio import read_png

    rendered = sorted(Path(args.rendered).glob("*.png"))
    gt = sorted(Path(args.gt).glob("*.png"))
    if len(rendered) != len(gt) or not rendered:
        print(
            f"error: directories must hold equal nonzero PNG counts "
            f"({len(rendered)} vs {len(gt)})",
            file=sys.stderr,
        )
        return 1
    r_seq = [read_png(p) for p in rendered]
    g_seq = [read_png(p) for p in gt]
    records = []
    for t, (r, g) in enumerate(zip(r_seq, g_seq)):
        records.append(
            metrics.frame_record(
                t, psnr=metrics.psnr(r, g), ssim=metrics.ssim(r, g), l1=metrics.l1_255(r, g)
            )
        )
    summary_vals = {
        "frames": len(records),
        "psnr_mean": float(np.mean([r["psnr"] for r in records])),
        "ssim_mean": float(np.mean([r["ssim"] for r in records])),
        "l1_mean": float(np.mean([r["l1"] for r in records])),
        "sdt": metrics.sdt(r_seq, g_seq),
    }
    if len(r_seq) >= 2:
        summary_vals["tcc"] = metrics.tcc(r_seq, g_seq)
    records.append(metrics.summary_record(**summary_vals))
    out = args.out or "report.jsonl"
    metrics.write_report(out, records)
    print(json.dumps(records[-1], sort_keys=True))
    return 0


def _cmd_oracle(args) -> int:
    from .dataio import load_camera_manifest, read_pfm, write_pfm
    from .raster import DEPTH, ScalarMap
    from .scenegen import voxel_tsdf_oracle

    root = Path(args.dataset)
    manifest = load_camera_manifest(root / "manifest.json")
    if args.target not in manifest:
        print(f"error: target camera {args.target!r} not in manifest", file=sys.stderr)
        return 1
    target = manifest[args.target]
    depths = []
    cams = []
    for vid, cam in manifest.items():
        if vid == args.target:
            continue
        depths.append(ScalarMap(read_pfm(root / vid / f"depth_{args.frame:06d}.pfm"), kind=DEPTH))
        cams.append(cam)
    depth = voxel_tsdf_oracle(depths, cams, target, voxel=args.voxel, tau=args.tau)
    write_pfm(args.out, depth)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="viewfuse", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic scene to a dataset directory")
    p.add_argument("--scene", required=True, help="scene JSON file")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--frames", type=int, default=None, help="override frame count")
    p.add_argument("--noise-sigma", type=float, default=0.0, help="depth noise sigma in meters")
    p.add_argument("--noise-dropout", type=float, default=0.0, help="depth dropout fraction")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--clean-depth", action="store_true", help="also write noise-free depth")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("render", help="run the full pipeline over a dataset")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--dataset", default=None, help="override dataset root")
    p.add_argument("--out", default=None, help="override output directory")
    p.add_argument("--target", default=None, help="override target camera id")
    p.add_argument("--k", type=int, default=None, help="override input view count")
    p.add_argument("--blend", default=None, choices=["uniform", "distance", "heuristic"])
    p.add_argument("--frames", type=int, default=None, help="override frame count")
    p.add_argument("--no-temporal-filter", action="store_true")
    p.add_argument("--no-temporal-tsdf", action="store_true")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="compare two image directories")
    p.add_argument("--rendered", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", default=None, help="report path (default report.jsonl)")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("oracle", help="voxel-grid TSDF oracle depth for one frame")
    p.add_argument("--dataset", required=True)
    p.add_argument("--frame", type=int, required=True)
    p.add_argument("--target", required=True, help="target camera id")
    p.add_argument("--voxel", type=float, default=0.005, help="voxel size in meters")
    p.add_argument("--tau", type=float, default=0.02, help="truncation in meters")
    p.add_argument("--out", required=True, help="output PFM path")
    p.set_defaults(func=_cmd_oracle)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
