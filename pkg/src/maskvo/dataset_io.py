"""Sequence ingestion and export.

Dataset layout (all rasters row-major, `.f32` = header-less little-endian
float32):

    calib.txt                  "fx fy cx cy width height"
    images/%06d.png            8-bit gray or 24-bit RGB
    priors/depth/%06d.f32      metric depth, H*W
    priors/mask/%06d.f32       inlier probability in [0,1], H*W
    priors/sem/%06d.f32        per-class probabilities, C planes of H*W
    sem_meta.txt               "C class0,class1,..."
    gt_traj.txt                optional, TUM style (timestamp tx ty tz qx qy qz qw)
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import cv2
import numpy as np

from .geometry import (
    Intrinsics,
    Pose,
    load_intrinsics,
    quat_xyzw_to_rotation,
    rotation_to_quat_xyzw,
)

Trajectory = List[Tuple[float, Pose]]


class DatasetError(ValueError):
    pass


def read_f32(path, shape) -> np.ndarray:
    data = np.fromfile(path, dtype="<f4")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise DatasetError(f"{path}: expected {expected} floats, found {data.size}")
    return data.reshape(shape).astype(np.float64)


def write_f32(arr: np.ndarray, path):
    np.asarray(arr, dtype="<f4").tofile(path)


def read_image(path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"{path}: unreadable image")
    if img.ndim == 3:
        img = cv2.cvtColor(img, cv2.COLOR_BGR2RGB)
    return img


def write_image(img: np.ndarray, path):
    out = img
    if img.ndim == 3:
        out = cv2.cvtColor(img, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), out):
        raise DatasetError(f"{path}: image write failed")


@dataclass
class PriorBundle:
    """Per-frame predictor outputs. mask and sem may be absent."""

    depth: np.ndarray
    mask: Optional[np.ndarray] = None
    sem: Optional[np.ndarray] = None

    def validate(self, origin: str = "priors"):
        if not np.all(np.isfinite(self.depth)):
            raise DatasetError(f"{origin}: depth has non-finite values")
        if np.any(self.depth <= 0):
            raise DatasetError(f"{origin}: depth must be strictly positive")
        if self.mask is not None:
            if not np.all(np.isfinite(self.mask)):
                raise DatasetError(f"{origin}: mask has non-finite values")
            if np.any(self.mask < 0) or np.any(self.mask > 1):
                raise DatasetError(f"{origin}: mask values outside [0,1]")
            if self.mask.shape != self.depth.shape:
                raise DatasetError(f"{origin}: mask/depth shape mismatch")
        if self.sem is not None:
            if self.sem.ndim != 3 or self.sem.shape[1:] != self.depth.shape:
                raise DatasetError(f"{origin}: sem raster shape mismatch")
            sums = self.sem.sum(axis=0)
            if np.max(np.abs(sums - 1.0)) > 1e-4:
                raise DatasetError(f"{origin}: sem probabilities do not sum to 1")


@dataclass
class SequenceFrame:
    index: int
    timestamp: float
    image: np.ndarray
    priors: Optional[PriorBundle] = None


def read_sem_meta(path):
    with open(path) as fh:
        line = fh.read().strip()
    m = re.match(r"(\d+)\s+(.*)$", line)
    if not m:
        raise DatasetError(f"{path}: malformed sem_meta line {line!r}")
    n = int(m.group(1))
    names = [s.strip() for s in m.group(2).split(",")]
    if len(names) != n:
        raise DatasetError(f"{path}: declared {n} classes but listed {len(names)}")
    return n, names


def write_sem_meta(names, path):
    with open(path, "w") as fh:
        fh.write(f"{len(names)} {','.join(names)}\n")


class SequenceReader:
    """Streams frames of a dataset directory in index order."""

    def __init__(self, root, rate: float = 10.0):
        self.root = str(root)
        self.rate = rate
        calib = os.path.join(self.root, "calib.txt")
        if not os.path.exists(calib):
            raise DatasetError(f"{calib}: calibration file missing")
        self.intrinsics = load_intrinsics(calib)
        img_dir = os.path.join(self.root, "images")
        if not os.path.isdir(img_dir):
            raise DatasetError(f"{img_dir}: image directory missing")
        names = sorted(f for f in os.listdir(img_dir) if f.endswith(".png"))
        if not names:
            raise DatasetError(f"{img_dir}: no frames found")
        self.indices = [int(os.path.splitext(n)[0]) for n in names]
        if any(b <= a for a, b in zip(self.indices, self.indices[1:])):
            raise DatasetError(f"{img_dir}: frame indices are not strictly increasing")
        self.n_classes = None
        self.class_names = None
        meta = os.path.join(self.root, "sem_meta.txt")
        if os.path.exists(meta):
            self.n_classes, self.class_names = read_sem_meta(meta)

    def __len__(self):
        return len(self.indices)

    def _prior_path(self, kind, index):
        return os.path.join(self.root, "priors", kind, f"{index:06d}.f32")

    def frame(self, index: int) -> SequenceFrame:
        img_path = os.path.join(self.root, "images", f"{index:06d}.png")
        image = read_image(img_path)
        h, w = image.shape[:2]
        if (w, h) != (self.intrinsics.width, self.intrinsics.height):
            raise DatasetError(
                f"{img_path}: size {w}x{h} does not match calibration "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        priors = None
        depth_path = self._prior_path("depth", index)
        if os.path.exists(depth_path):
            depth = read_f32(depth_path, (h, w))
            mask = None
            sem = None
            mask_path = self._prior_path("mask", index)
            if os.path.exists(mask_path):
                mask = read_f32(mask_path, (h, w))
            sem_path = self._prior_path("sem", index)
            if os.path.exists(sem_path):
                if self.n_classes is None:
                    raise DatasetError(f"{sem_path}: sem raster without sem_meta.txt")
                sem = read_f32(sem_path, (self.n_classes, h, w))
            priors = PriorBundle(depth, mask, sem)
            priors.validate(origin=depth_path)
        return SequenceFrame(
            index=index,
            timestamp=index / self.rate,
            image=image,
            priors=priors,
        )

    def __iter__(self) -> Iterator[SequenceFrame]:
        for index in self.indices:
            yield self.frame(index)

    def gt_trajectory(self) -> Optional[Trajectory]:
        path = os.path.join(self.root, "gt_traj.txt")
        if not os.path.exists(path):
            return None
        return read_trajectory(path)


def load_sequence(root, rate: float = 10.0) -> SequenceReader:
    return SequenceReader(root, rate=rate)


def write_trajectory(traj: Trajectory, path):
    """One line per pose: "timestamp tx ty tz qx qy qz qw", 9 significant digits."""
    with open(path, "w") as fh:
        for ts, pose in traj:
            q = rotation_to_quat_xyzw(pose.rotation)
            t = pose.translation
            fields = " ".join(f"{v:.9g}" for v in (*t, *q))
            fh.write(f"{ts:.9f} {fields}\n")


def read_trajectory(path) -> Trajectory:
    traj: Trajectory = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            vals = [float(v) for v in line.split()]
            if len(vals) != 8:
                raise DatasetError(f"{path}:{ln}: expected 8 fields")
            ts, tx, ty, tz, qx, qy, qz, qw = vals
            pose = Pose(quat_xyzw_to_rotation([qx, qy, qz, qw]), [tx, ty, tz])
            traj.append((ts, pose))
    if any(b[0] <= a[0] for a, b in zip(traj, traj[1:])):
        raise DatasetError(f"{path}: timestamps are not strictly increasing")
    return traj


def write_ply(path, xyz: np.ndarray, rgb: np.ndarray, labels=None):
    """ASCII point cloud with float x,y,z, uchar red,green,blue and an
    optional uchar class label."""
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    rgb = np.asarray(rgb).reshape(-1, 3)
    if not np.all(np.isfinite(xyz)):
        raise DatasetError("point cloud contains non-finite coordinates")
    if rgb.shape[0] != xyz.shape[0]:
        raise DatasetError("xyz/rgb length mismatch")
    if labels is not None:
        labels = np.asarray(labels).reshape(-1)
        if labels.shape[0] != xyz.shape[0]:
            raise DatasetError("xyz/label length mismatch")
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {xyz.shape[0]}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        fh.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        if labels is not None:
            fh.write("property uchar label\n")
        fh.write("end_header\n")
        for i in range(xyz.shape[0]):
            x, y, z = xyz[i]
            r, g, b = (int(c) for c in rgb[i])
            line = f"{x:.6g} {y:.6g} {z:.6g} {r} {g} {b}"
            if labels is not None:
                line += f" {int(labels[i])}"
            fh.write(line + "\n")
