"""Command-line entry points.

Subcommands:
    generate   render a synthetic dataset (preset or scene config)
    run        full pipeline over a dataset
    eval       accuracy/completeness between two PLY clouds
    depth      single-frame sweep for debugging
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .evalkit import depth_error_stats, quality_sweep
from .pipeline import (
    RunConfig, generate_dataset, plane_in_camera, preset_run, preset_scene,
    run_pipeline, scene_from_config,
)
from .synthworld import default_rig, script_trajectory


def _cmd_generate(args) -> int:
    if args.preset:
        scene, rig, traj = preset_scene(args.preset, args.width, args.height)
    else:
        if not args.scene:
            print("generate: need --preset or --scene", file=sys.stderr)
            return 2
        scene = scene_from_config(Path(args.scene).read_text())
        rig = fileio.load_rig(args.rig) if args.rig \
            else default_rig(args.width, args.height)
        traj = script_trajectory(args.length, args.speed, args.rate,
                                 yaw_rate_deg_s=args.yaw_rate)
    if args.frames > 0:
        traj = traj[: args.frames]
    info = generate_dataset(scene, rig, traj, args.out)
    print(f"wrote {info['frames']} frames x {info['cameras']} cameras to {info['path']}")
    return 0


_RUN_FLAGS = [
    # (flag, dest, type) — numeric/str RunConfig overrides exposed 1:1
    ("--mode", "mode", str),
    ("--threads", "threads", int),
    ("--max-frames", "max_frames", int),
    ("--frame-stride", "frame_stride", int),
    ("--ply-every", "ply_every", int),
    ("--n-fronto", "n_fronto", int),
    ("--n-ground", "n_ground", int),
    ("--z-min", "z_min", float),
    ("--z-max", "z_max", float),
    ("--window-full", "window_full", int),
    ("--window-low", "window_low", int),
    ("--crop-w", "crop_w", int),
    ("--crop-h", "crop_h", int),
    ("--best-k", "best_k", int),
    ("--alpha-upper", "alpha_upper", float),
    ("--alpha-lower", "alpha_lower", float),
    ("--beta", "beta", float),
    ("--gamma", "gamma", float),
    ("--delta", "delta", float),
    ("--voxel-size", "voxel_size", float),
    ("--mu", "mu", float),
    ("--w-max", "w_max", int),
    ("--min-block-observations", "min_block_observations", int),
    ("--min-voxel-weight", "min_voxel_weight", int),
    ("--max-integration-depth", "max_integration_depth", float),
    ("--gt-max-depth", "gt_max_depth", float),
]


def _cmd_run(args) -> int:
    overrides = {}
    if args.dataset:
        overrides["dataset"] = args.dataset
    if args.out:
        overrides["out_dir"] = args.out
    for _, dest, _ in _RUN_FLAGS:
        val = getattr(args, dest)
        if val is not None:
            overrides[dest] = val
    for flag, dest in (("no_best_cost", "use_best_cost"),
                       ("no_uniqueness", "use_uniqueness"),
                       ("no_consistency", "use_consistency"),
                       ("no_masking", "use_masking"),
                       ("no_ground_planes", "use_ground_planes")):
        if getattr(args, flag):
            overrides[dest] = False
    for flag in ("pipelined", "save_depth", "save_volume"):
        if getattr(args, flag):
            overrides[flag] = True
    if args.cameras:
        overrides["cameras"] = tuple(int(v) for v in args.cameras.split(","))
    if args.preset and args.config:
        raise SystemExit("run: --preset and --config are mutually exclusive")
    if args.preset:
        cfg = preset_run(args.preset, overrides.pop("dataset", ""),
                         overrides.pop("out_dir", ""), **overrides)
    elif args.config:
        cfg = RunConfig.from_file(args.config, **overrides)
    else:
        cfg = RunConfig.from_dict(overrides)
    if not cfg.dataset or not cfg.out_dir:
        raise SystemExit("run: --dataset and --out are required "
                         "(on the command line or in --config)")
    summary = run_pipeline(cfg)
    print(json.dumps({k: summary[k] for k in
                      ("frames_processed", "frames_skipped", "points", "quality")},
                     indent=2))
    return 0


def _cmd_eval(args) -> int:
    pts, _ = fileio.read_ply(args.ply)
    gt, _ = fileio.read_ply(args.gt_ply)
    quality = {f"{t:.2f}": {"accuracy": q.accuracy, "completeness": q.completeness}
               for t, q in quality_sweep(pts, gt).items()}
    text = json.dumps(quality, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def _cmd_depth(args) -> int:
    from .planesweep import multiscale_depth

    ds = Path(args.dataset)
    rig = fileio.load_rig(ds / "rig.cfg")
    poses = fileio.load_trajectory(ds / "trajectory.txt")
    if args.frame >= len(poses):
        print(f"depth: frame {args.frame} has no pose", file=sys.stderr)
        return 2
    images = [
        fileio.read_pgm(ds / "images" / f"cam{i}" / f"{args.frame:06d}.pgm").astype(np.float32) / 255.0
        for i in range(len(rig))
    ]
    cfg = RunConfig(dataset=str(ds), out_dir=".", mode=args.mode or "multiscale")
    world_to_ref = rig.cam_from_world(rig.reference_index, poses[args.frame][1])
    ground = plane_in_camera((0.0, 0.0, 1.0), 0.0, world_to_ref)
    d = multiscale_depth(images, rig, cfg.sweep_config(), ground, cfg.mode,
                         args.threads or 0)
    fileio.write_pfm(args.out, d.depth)
    gt_path = ds / "depth_gt" / f"{args.frame:06d}.pfm"
    if gt_path.exists():
        s = depth_error_stats(d, fileio.read_pfm(gt_path), frame_id=args.frame)
        print(f"frame {args.frame}: median {s.median_abs_err:.4f} m, "
              f"mean {s.mean_abs_err:.4f} m over {s.valid_evaluated} px")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fisheyemap",
                                description="Fisheye plane-sweep stereo + TSDF mapping")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic dataset")
    g.add_argument("--preset", choices=["urban", "moving", "moving_off",
                                        "facade", "wall"])
    g.add_argument("--scene", help="scene config file (alternative to --preset)")
    g.add_argument("--rig", help="rig config (default: built-in 5-camera rig)")
    g.add_argument("--out", required=True)
    g.add_argument("--width", type=int, default=512)
    g.add_argument("--height", type=int, default=272)
    g.add_argument("--frames", type=int, default=0, help="truncate trajectory")
    g.add_argument("--length", type=float, default=20.0)
    g.add_argument("--speed", type=float, default=10.0)
    g.add_argument("--rate", type=float, default=25.0)
    g.add_argument("--yaw-rate", type=float, default=0.0)
    g.set_defaults(func=_cmd_generate)

    r = sub.add_parser("run", help="run the pipeline over a dataset")
    # dataset/out may instead come from --config; checked in _cmd_run
    r.add_argument("--dataset")
    r.add_argument("--out")
    r.add_argument("--preset", choices=("urban", "moving"),
                   help="tuned settings for the matching generate preset")
    r.add_argument("--config", help="run config file (key = value lines)")
    r.add_argument("--cameras", help="comma-separated camera indices")
    for flag, dest, typ in _RUN_FLAGS:
        r.add_argument(flag, dest=dest, type=typ, default=None)
    for flag in ("--no-best-cost", "--no-uniqueness", "--no-consistency",
                 "--no-masking", "--no-ground-planes", "--pipelined",
                 "--save-depth", "--save-volume"):
        r.add_argument(flag, dest=flag[2:].replace("-", "_"), action="store_true")
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("eval", help="compare two PLY clouds")
    e.add_argument("--ply", required=True, help="reconstructed cloud")
    e.add_argument("--gt-ply", required=True, help="reference cloud")
    e.add_argument("--out", help="write quality JSON here")
    e.set_defaults(func=_cmd_eval)

    d = sub.add_parser("depth", help="single-frame sweep to a PFM")
    d.add_argument("--dataset", required=True)
    d.add_argument("--frame", type=int, required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--mode", choices=["full", "half", "multiscale"])
    d.add_argument("--threads", type=int)
    d.set_defaults(func=_cmd_depth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
