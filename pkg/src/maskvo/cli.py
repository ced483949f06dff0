"""Command-line entry points: run, eval, synth, export-cloud."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import _kernels
from .dataset_io import (
    SequenceReader,
    read_f32,
    read_trajectory,
    write_ply,
    write_trajectory,
)
from .evaluate import ate_rmse, snippet_ate
from .geometry import backproject_grid, load_intrinsics
from .pipeline import PipelineConfig, load_config, run, run_snippets, write_outputs
from .synth import default_intrinsics, render, spec_from_mapping


def _cmd_run(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    seq = SequenceReader(args.seq, rate=cfg.frame_rate)
    os.makedirs(args.out, exist_ok=True)
    debug_dir = os.path.join(args.out, "debug") if args.debug_rasters else None
    snippet = args.snippet or cfg.snippet_len
    if snippet:
        outs = run_snippets(seq, cfg, snippet)
        traj = [p for out in outs for p in out.trajectory]
        write_trajectory(traj, os.path.join(args.out, "traj.txt"))
        for i, out in enumerate(outs):
            write_outputs(out, os.path.join(args.out, f"snippets/{i:03d}"), seq)
        print(f"wrote {len(outs)} snippets to {args.out} [{_kernels.active_backend()} kernels]")
    else:
        out = run(seq, cfg, debug_dir=debug_dir)
        write_outputs(out, args.out, seq)
        n_fail = sum(d.tracking_failed for d in out.diagnostics)
        print(
            f"tracked {len(out.trajectory)} frames, {len(out.keyframes)} keyframes, "
            f"{n_fail} failures [{_kernels.active_backend()} kernels]"
        )
    return 0


def _cmd_eval(args):
    est = read_trajectory(args.est)
    gt = read_trajectory(args.gt)
    if args.snippet:
        mean, std, count = snippet_ate(est, gt, args.snippet, args.align)
        if args.csv:
            from .evaluate import split_snippets

            with open(args.csv, "w") as fh:
                fh.write("snippet,ate_rmse\n")
                for i, (e, g) in enumerate(
                    zip(split_snippets(est, args.snippet), split_snippets(gt, args.snippet))
                ):
                    fh.write(f"{i},{ate_rmse(e, g, args.align):.9g}\n")
    else:
        mean, std, count = ate_rmse(est, gt, args.align), 0.0, 1
    print(f"ATE_RMSE {mean:.9g} {std:.9g} {count}")
    return 0


def _cmd_synth(args):
    kv = {}
    if args.spec:
        with open(args.spec) as fh:
            for line in fh:
                line = line.split("#", 1)[0].strip()
                if line:
                    k, v = (s.strip() for s in line.split("=", 1))
                    kv[k] = v
    intr = {k: kv.pop(k) for k in ("width", "height", "f") if k in kv}
    kv.setdefault("kind", args.scene)
    kv["seed"] = str(args.seed)
    spec = spec_from_mapping(kv)
    K = default_intrinsics(
        int(intr.get("width", 416)), int(intr.get("height", 128)),
        float(intr.get("f", 200.0)),
    )
    render(spec, K, args.frames, args.out)
    print(f"rendered {args.frames} {spec.kind} frames to {args.out}")
    return 0


def _cmd_export_cloud(args):
    kf_dir = args.kf_dir
    K = load_intrinsics(os.path.join(kf_dir, "calib.txt"))
    poses = read_trajectory(os.path.join(kf_dir, "keyframes.txt"))
    depth_dir = os.path.join(kf_dir, "kf", "depth")
    image_dir = os.path.join(kf_dir, "kf", "image")
    label_dir = os.path.join(kf_dir, "kf", "labels")
    stems = sorted(os.path.splitext(f)[0] for f in os.listdir(depth_dir))
    if len(stems) != len(poses):
        raise SystemExit("keyframes.txt does not match the depth rasters")
    all_xyz, all_rgb, all_lab = [], [], []
    have_labels = os.path.isdir(label_dir)
    for (_, pose), stem in zip(poses, stems):
        depth = read_f32(os.path.join(depth_dir, stem + ".f32"), (K.height, K.width))
        from .dataset_io import read_image

        gray = read_image(os.path.join(image_dir, stem + ".png"))
        keep = np.isfinite(depth) & (depth > 0)
        if args.max_depth is not None:
            keep &= depth <= args.max_depth
        pts = backproject_grid(depth, K)[keep]
        all_xyz.append(pose.apply(pts))
        g = gray[keep]
        all_rgb.append(np.stack([g, g, g], axis=1))
        if have_labels:
            labels = np.fromfile(
                os.path.join(label_dir, stem + ".u8"), dtype=np.uint8
            ).reshape(K.height, K.width)
            all_lab.append(labels[keep])
    xyz = np.concatenate(all_xyz)
    rgb = np.concatenate(all_rgb)
    labels = np.concatenate(all_lab) if have_labels else None
    write_ply(args.out, xyz, rgb, labels)
    print(f"wrote {xyz.shape[0]} points to {args.out}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="maskvo")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="process a sequence")
    p.add_argument("--seq", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--snippet", type=int, default=None)
    p.add_argument("--debug-rasters", action="store_true")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="trajectory error against ground truth")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--align", choices=("none", "se3", "sim3"), default="sim3")
    p.add_argument("--snippet", type=int, default=None)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("synth", help="render a synthetic sequence")
    p.add_argument("--scene", choices=("plane", "box", "occluder"), default="plane")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--spec", default=None, help="key=value overrides")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("export-cloud", help="point cloud from a run directory")
    p.add_argument("--kf-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--max-depth", type=float, default=None)
    p.set_defaults(func=_cmd_export_cloud)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
