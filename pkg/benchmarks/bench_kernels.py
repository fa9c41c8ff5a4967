#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-NumPy fallback.

Default invocation runs a fixed workload (plane sweep, TSDF integration,
raycast) under whichever backend the package selected and prints one JSON
line. ``--compare`` re-runs the same workload in two subprocesses, one per
backend, verifies the outputs are bit-identical, and prints a speedup table.
"""

import argparse
import hashlib
import json
import os
import subprocess
import sys
import time


def run_workload(threads: int) -> dict:
    import numpy as np

    from fisheyemap.kernels import BACKEND
    from fisheyemap.pipeline import preset_scene
    from fisheyemap.planesweep import SweepConfig, multiscale_depth
    from fisheyemap.synthworld import render_frame
    from fisheyemap.tsdf import TsdfVolume

    scene, rig, traj = preset_scene("urban", 256, 136)
    cfg = SweepConfig(n_fronto=64, n_ground=12, z_min=2.0, z_max=30.0,
                      crop_w=142, crop_h=82)
    ref_cam = rig.cameras[rig.reference_index]

    frames = []
    for fid in (0, 5, 10):
        t, pose = traj[fid]
        frames.append((pose, render_frame(scene, rig, pose, t, frame_id=fid)))

    t0 = time.perf_counter()
    depths = [multiscale_depth(list(p.images), rig, cfg, None, "multiscale",
                               threads) for _, p in frames]
    sweep_s = time.perf_counter() - t0

    vol = TsdfVolume()
    t0 = time.perf_counter()
    for (pose, _), d in zip(frames, depths):
        w2r = rig.cam_from_world(rig.reference_index, pose)
        vol.allocate(d, ref_cam, w2r)
        vol.integrate(d, ref_cam, w2r, threads)
    integrate_s = time.perf_counter() - t0

    w2r = rig.cam_from_world(rig.reference_index, frames[0][0])
    t0 = time.perf_counter()
    ray = vol.raycast(ref_cam, w2r, cfg.z_min, cfg.z_max)
    raycast_s = time.perf_counter() - t0

    digest = hashlib.sha256()
    for d in depths:
        digest.update(d.depth.tobytes())
        digest.update(d.best_cost.tobytes())
    digest.update(ray.depth.tobytes())
    digest.update(vol.extract_points(1, 1).tobytes())

    return {
        "backend": BACKEND,
        "sweep_s": round(sweep_s, 4),
        "integrate_s": round(integrate_s, 4),
        "raycast_s": round(raycast_s, 4),
        "sha256": digest.hexdigest(),
    }


def compare(threads: int) -> int:
    results = {}
    for label, force in (("native", "0"), ("numpy", "1")):
        env = dict(os.environ, FISHEYEMAP_PURE_PYTHON=force)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--threads",
             str(threads)],
            env=env, capture_output=True, text=True)
        if proc.returncode:
            sys.stderr.write(proc.stderr)
            return proc.returncode
        results[label] = json.loads(proc.stdout.strip().splitlines()[-1])

    if results["native"]["backend"] == "numpy":
        print("compiled extension unavailable; both runs used the fallback")

    print(f"{'stage':<12} {'native':>10} {'numpy':>10} {'speedup':>9}")
    for stage in ("sweep_s", "integrate_s", "raycast_s"):
        a, b = results["native"][stage], results["numpy"][stage]
        print(f"{stage:<12} {a:>9.3f}s {b:>9.3f}s {b / max(a, 1e-9):>8.2f}x")

    if results["native"]["sha256"] != results["numpy"]["sha256"]:
        print("FAIL: backends disagree (output hashes differ)")
        return 1
    print("outputs bit-identical across backends")
    return 0


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--compare", action="store_true",
                    help="run both backends in subprocesses and diff them")
    ap.add_argument("--threads", type=int, default=0,
                    help="kernel thread count (0 = single-threaded)")
    args = ap.parse_args()
    if args.compare:
        return compare(args.threads)
    print(json.dumps(run_workload(args.threads)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
