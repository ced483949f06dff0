"""Synthetic scene renderer with exact ground truth.

Scenes are analytic (textured plane, box room, plane plus a moving
occluder quad) so every rendered pixel comes with exact depth, pose,
outlier mask and class label. Textures are band-limited sums of random
sinusoids: smooth, non-repeating, and informative for both gradients
and patch correlation everywhere.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .dataset_io import (
    PriorBundle,
    write_f32,
    write_image,
    write_sem_meta,
    write_trajectory,
)
from .geometry import Intrinsics, Pose, save_intrinsics

SCENE_KINDS = ("plane", "box", "occluder")


class RenderError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "plane"
    seed: int = 0
    # texture
    n_waves: int = 24
    freq_lo: float = 1.0  # cycles per meter
    freq_hi: float = 14.0
    contrast: float = 0.17  # luminance std before clipping
    # trajectory: lateral arc, camera looking along +z
    speed: float = 0.03  # meters per frame
    yaw_rate: float = 0.004  # radians per frame
    # plane / occluder scene geometry
    plane_z: float = 2.5
    occ_z: float = 1.5
    occ_half_x: float = 0.45
    occ_half_y: float = 0.28
    occ_x0: float = -0.1
    occ_y0: float = 0.0
    occ_vel_x: float = 0.045  # meters per frame
    # box scene geometry (camera starts at the origin inside)
    box_min: tuple = (-2.0, -1.3, -2.0)
    box_max: tuple = (3.5, 1.3, 6.0)
    # prior corruption
    noise_depth: float = 0.0  # lognormal sigma on depth
    noise_mask: float = 0.0  # blend rate toward 0.5
    noise_sem: float = 0.0  # per-pixel probability of replacing with uniform

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise ValueError(f"unknown scene kind {self.kind!r}")
        if min(self.noise_depth, self.noise_mask, self.noise_sem) < 0:
            raise ValueError("noise levels must be non-negative")

    @property
    def n_classes(self) -> int:
        return {"plane": 1, "occluder": 2, "box": 6}[self.kind]

    @property
    def class_names(self):
        if self.kind == "plane":
            return ["plane"]
        if self.kind == "occluder":
            return ["background", "occluder"]
        return ["x_min", "x_max", "y_min", "y_max", "z_min", "z_max"]


def default_intrinsics(width: int = 416, height: int = 128, f: float = 200.0) -> Intrinsics:
    return Intrinsics(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)


class _WaveTexture:
    """Sum of random sinusoids over R^dim, values roughly 0.5 +- contrast."""

    def __init__(self, spec: SceneSpec, dim: int, stream: int):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7, stream]))
        n = spec.n_waves
        dirs = rng.normal(size=(n, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        freqs = np.exp(rng.uniform(np.log(spec.freq_lo), np.log(spec.freq_hi), size=n))
        amps = 1.0 / freqs
        amps *= spec.contrast / math.sqrt(0.5 * float(np.sum(amps**2)))
        self.k = 2.0 * math.pi * freqs[:, None] * dirs  # (n, dim)
        self.phase = rng.uniform(0.0, 2.0 * math.pi, size=n)
        self.amps = amps

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """points: (..., dim) -> luminance in [0.02, 0.98]."""
        phases = points @ self.k.T + self.phase
        vals = 0.5 + np.sin(phases) @ self.amps
        return np.clip(vals, 0.02, 0.98)


def trajectory_pose(spec: SceneSpec, i: int) -> Pose:
    """Camera-to-world pose of frame i: an arc in the x-z plane.

    The camera looks along +z and translates mostly along +x, which gives
    usable parallax against the fronto-parallel scenes.
    """
    theta = spec.yaw_rate * i
    if abs(spec.yaw_rate) > 1e-12:
        radius = spec.speed / spec.yaw_rate
        x = radius * math.sin(theta)
        z = radius * (1.0 - math.cos(theta))
    else:
        x = spec.speed * i
        z = 0.0
    c, s = math.cos(theta), math.sin(theta)
    R = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return Pose(R, np.array([x, 0.0, z]))


@dataclass
class FrameTruth:
    pose: Pose  # camera-to-world
    gray: np.ndarray  # (H, W) float in [0,1]
    depth: np.ndarray  # (H, W) camera-frame z, meters
    mask: np.ndarray  # (H, W) 1 = photometrically consistent
    labels: np.ndarray  # (H, W) int class ids


class _Renderer:
    def __init__(self, spec: SceneSpec):
        self.spec = spec
        if spec.kind == "box":
            self.tex = _WaveTexture(spec, dim=3, stream=0)
        else:
            self.tex = _WaveTexture(spec, dim=2, stream=0)
        self.occ_tex = _WaveTexture(spec, dim=2, stream=1) if spec.kind == "occluder" else None

    def _rays(self, pose: Pose, K: Intrinsics):
        us = np.arange(K.width, dtype=np.float64)[None, :]
        vs = np.arange(K.height, dtype=np.float64)[:, None]
        x = np.broadcast_to((us - K.cx) / K.fx, (K.height, K.width))
        y = np.broadcast_to((vs - K.cy) / K.fy, (K.height, K.width))
        dirs_cam = np.stack([x, y, np.ones_like(x)], axis=-1)
        dirs_world = dirs_cam @ pose.rotation.T
        return pose.translation, dirs_world

    def render(self, K: Intrinsics, i: int) -> FrameTruth:
        spec = self.spec
        pose = trajectory_pose(spec, i)
        origin, dirs = self._rays(pose, K)
        if spec.kind in ("plane", "occluder"):
            if origin[2] > spec.plane_z - 0.2:
                raise RenderError(f"frame {i}: camera too close to the plane")
            dz = dirs[..., 2]
            if np.any(dz <= 1e-6):
                raise RenderError(f"frame {i}: rays parallel to the plane")
            t_bg = (spec.plane_z - origin[2]) / dz
            pts = origin + t_bg[..., None] * dirs
            gray = self.tex(pts[..., :2])
            depth = t_bg.copy()
            mask = np.ones_like(depth)
            labels = np.zeros(depth.shape, dtype=np.int32)
            if spec.kind == "occluder":
                if origin[2] > spec.occ_z - 0.2:
                    raise RenderError(f"frame {i}: camera passed the occluder")
                oc_x = spec.occ_x0 + spec.occ_vel_x * i
                t_oc = (spec.occ_z - origin[2]) / dz
                p_oc = origin + t_oc[..., None] * dirs
                local_x = p_oc[..., 0] - oc_x
                local_y = p_oc[..., 1] - spec.occ_y0
                hit = (np.abs(local_x) <= spec.occ_half_x) & (
                    np.abs(local_y) <= spec.occ_half_y
                )
                oc_gray = self.occ_tex(np.stack([local_x, local_y], axis=-1))
                gray = np.where(hit, oc_gray, gray)
                depth = np.where(hit, t_oc, depth)
                mask = np.where(hit, 0.0, 1.0)
                labels = np.where(hit, 1, labels).astype(np.int32)
            return FrameTruth(pose, gray, depth, mask, labels)

        # box: camera inside an axis-aligned room, rays exit through a face
        lo = np.asarray(spec.box_min)
        hi = np.asarray(spec.box_max)
        if np.any(origin < lo + 0.2) or np.any(origin > hi - 0.2):
            raise RenderError(f"frame {i}: camera left the box interior")
        t_best = np.full(dirs.shape[:2], np.inf)
        face = np.zeros(dirs.shape[:2], dtype=np.int32)
        for axis in range(3):
            d = dirs[..., axis]
            with np.errstate(divide="ignore"):
                bound = np.where(d > 0, hi[axis], lo[axis])
                t = (bound - origin[axis]) / d
            t = np.where(np.abs(d) < 1e-12, np.inf, t)
            closer = t < t_best
            t_best = np.where(closer, t, t_best)
            face_id = 2 * axis + (d > 0)  # x_min=0, x_max=1, y_min=2, ...
            face = np.where(closer, face_id, face)
        pts = origin + t_best[..., None] * dirs
        gray = self.tex(pts)
        return FrameTruth(pose, gray, t_best, np.ones_like(t_best), face)


def render_frame(spec: SceneSpec, K: Intrinsics, i: int) -> FrameTruth:
    return _Renderer(spec).render(K, i)


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    sem = np.zeros((n_classes, *labels.shape))
    for c in range(n_classes):
        sem[c] = labels == c
    return sem


def corrupt_priors(
    depth: np.ndarray,
    mask: np.ndarray,
    sem: Optional[np.ndarray],
    spec: SceneSpec,
    frame_index: int,
) -> PriorBundle:
    """Apply the spec's noise model; deterministic in (seed, frame_index)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 11, frame_index]))
    out_depth = depth.copy()
    if spec.noise_depth > 0:
        out_depth = depth * np.exp(spec.noise_depth * rng.standard_normal(depth.shape))
    out_mask = (1.0 - spec.noise_mask) * mask + 0.5 * spec.noise_mask
    out_sem = None
    if sem is not None:
        out_sem = sem.copy()
        if spec.noise_sem > 0:
            flip = rng.uniform(size=depth.shape) < spec.noise_sem
            out_sem[:, flip] = 1.0 / sem.shape[0]
    return PriorBundle(out_depth, out_mask, out_sem)


def render(spec: SceneSpec, K: Intrinsics, n_frames: int, out_dir) -> str:
    """Write a full sequence in the dataset layout; returns out_dir."""
    out_dir = str(out_dir)
    for sub in ("images", "priors/depth", "priors/mask", "priors/sem"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    save_intrinsics(K, os.path.join(out_dir, "calib.txt"))
    write_sem_meta(spec.class_names, os.path.join(out_dir, "sem_meta.txt"))
    renderer = _Renderer(spec)
    traj = []
    rate = 10.0
    for i in range(n_frames):
        truth = renderer.render(K, i)
        img = np.round(truth.gray * 255.0).astype(np.uint8)
        write_image(img, os.path.join(out_dir, "images", f"{i:06d}.png"))
        sem = _one_hot(truth.labels, spec.n_classes)
        priors = corrupt_priors(truth.depth, truth.mask, sem, spec, i)
        write_f32(priors.depth, os.path.join(out_dir, "priors", "depth", f"{i:06d}.f32"))
        write_f32(priors.mask, os.path.join(out_dir, "priors", "mask", f"{i:06d}.f32"))
        write_f32(priors.sem, os.path.join(out_dir, "priors", "sem", f"{i:06d}.f32"))
        traj.append((i / rate, truth.pose))
    write_trajectory(traj, os.path.join(out_dir, "gt_traj.txt"))
    return out_dir


def spec_from_mapping(kv: dict) -> SceneSpec:
    """Build a SceneSpec from parsed key=value pairs; unknown keys raise."""
    valid = {f.name: f.type for f in fields(SceneSpec)}
    kwargs = {}
    for key, raw in kv.items():
        if key not in valid:
            raise ValueError(f"unknown scene key {key!r}")
        current = getattr(SceneSpec(), key)
        if isinstance(current, str):
            kwargs[key] = raw
        elif isinstance(current, int) and not isinstance(current, bool):
            kwargs[key] = int(raw)
        elif isinstance(current, tuple):
            kwargs[key] = tuple(float(v) for v in raw.split(","))
        else:
            kwargs[key] = float(raw)
    return SceneSpec(**kwargs)
