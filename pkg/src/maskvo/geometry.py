"""SE(3) poses, pinhole projection, and differentiable bilinear sampling.

Conventions used throughout the package:
  - a Pose maps points from its source frame into its target frame,
    X_target = R @ X_source + t;
  - twists are ordered (wx, wy, wz, vx, vy, vz), rotation first;
  - pixel (0, 0) is the center of the top-left pixel, so the sampling
    domain of a WxH image is [0, W-1] x [0, H-1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

_ORTHO_TOL = 1e-9
_TINY_ANGLE = 1e-8


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def load_intrinsics(path) -> Intrinsics:
    """Read a calibration file: one ASCII line "fx fy cx cy width height"."""
    with open(path) as fh:
        tokens = fh.read().split()
    if len(tokens) != 6:
        raise GeometryError(f"{path}: expected 6 fields, got {len(tokens)}")
    fx, fy, cx, cy = (float(v) for v in tokens[:4])
    width, height = int(tokens[4]), int(tokens[5])
    return Intrinsics(fx, fy, cx, cy, width, height)


def save_intrinsics(K: Intrinsics, path):
    with open(path, "w") as fh:
        fh.write(f"{K.fx:.9g} {K.fy:.9g} {K.cx:.9g} {K.cy:.9g} {K.width} {K.height}\n")


class PixelCoord(NamedTuple):
    u: float
    v: float


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3,3) with det +1 and translation (3,)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise GeometryError("rotation determinant is not +1")
        R = R.copy()
        t = t.copy()
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @staticmethod
    def from_matrix(T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=np.float64)
        return Pose(T[:3, :3], T[:3, 3])

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation


def compose(a: Pose, b: Pose) -> Pose:
    """Pose applying b first, then a."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose(Rt, -Rt @ a.translation)


def _skew(w) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def se3_exp(xi: np.ndarray) -> Pose:
    """Exponential map from a twist (wx,wy,wz,vx,vy,vz) to a Pose."""
    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise GeometryError("twist has non-finite components")
    w, v = xi[:3], xi[3:]
    theta = float(np.linalg.norm(w))
    K = _skew(w)
    K2 = K @ K
    if theta < _TINY_ANGLE:
        # second-order series in theta
        A = 1.0 - theta**2 / 6.0
        B = 0.5 - theta**2 / 24.0
        C = 1.0 / 6.0 - theta**2 / 120.0
    else:
        A = math.sin(theta) / theta
        B = (1.0 - math.cos(theta)) / theta**2
        C = (theta - math.sin(theta)) / theta**3
    R = np.eye(3) + A * K + B * K2
    V = np.eye(3) + B * K + C * K2
    return Pose(R, V @ v)


def _quat_from_rotation(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0, largest-component branch."""
    m00, m01, m02 = R[0]
    m10, m11, m12 = R[1]
    m20, m21, m22 = R[2]
    tr = m00 + m11 + m22
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m21 - m12) / s, (m02 - m20) / s, (m10 - m01) / s])
    elif m00 >= m11 and m00 >= m22:
        s = math.sqrt(1.0 + m00 - m11 - m22) * 2.0
        q = np.array([(m21 - m12) / s, 0.25 * s, (m01 + m10) / s, (m02 + m20) / s])
    elif m11 >= m22:
        s = math.sqrt(1.0 + m11 - m00 - m22) * 2.0
        q = np.array([(m02 - m20) / s, (m01 + m10) / s, 0.25 * s, (m12 + m21) / s])
    else:
        s = math.sqrt(1.0 + m22 - m00 - m11) * 2.0
        q = np.array([(m10 - m01) / s, (m02 + m20) / s, (m12 + m21) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    if q[0] < 0:
        q = -q
    return q


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R. Near theta = pi the axis is recovered from the
    quaternion vector part (the symmetric part of R), which stays stable."""
    q = _quat_from_rotation(np.asarray(R, dtype=np.float64))
    w = q[0]
    vec = q[1:]
    n = float(np.linalg.norm(vec))
    if n < _TINY_ANGLE:
        return 2.0 * vec  # small-angle: omega ~ 2 * vec
    theta = 2.0 * math.atan2(n, w)
    return (theta / n) * vec


def se3_log(T: Pose) -> np.ndarray:
    """Twist such that se3_exp(se3_log(T)) == T."""
    w = so3_log(T.rotation)
    theta = float(np.linalg.norm(w))
    K = _skew(w)
    K2 = K @ K
    if theta < 1e-4:
        coef = 1.0 / 12.0 + theta**2 / 720.0
    else:
        half = 0.5 * theta
        coef = (1.0 - half * math.cos(half) / math.sin(half)) / theta**2
    Vinv = np.eye(3) - 0.5 * K + coef * K2
    v = Vinv @ T.translation
    return np.concatenate([w, v])


class Projection(NamedTuple):
    u: float
    v: float
    depth: float
    valid: bool


def project(p, depth: float, T: Pose, K: Intrinsics) -> Projection:
    """Warp pixel p with a known depth through T and reproject with K.

    valid is False when the point lands behind the camera or outside
    [0, W-1] x [0, H-1].
    """
    if depth <= 0:
        raise GeometryError("depth must be positive")
    u, v = p
    X = depth * np.array([(u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0])
    Xp = T.rotation @ X + T.translation
    z = float(Xp[2])
    if z <= 0:
        return Projection(math.nan, math.nan, z, False)
    up = K.fx * Xp[0] / z + K.cx
    vp = K.fy * Xp[1] / z + K.cy
    inside = 0.0 <= up <= K.width - 1 and 0.0 <= vp <= K.height - 1
    return Projection(float(up), float(vp), z, inside)


def backproject_grid(depth: np.ndarray, K: Intrinsics) -> np.ndarray:
    """Camera-frame 3D points, shape (H, W, 3), for a dense depth raster."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    us = np.arange(w, dtype=np.float64)[None, :]
    vs = np.arange(h, dtype=np.float64)[:, None]
    x = (us - K.cx) / K.fx * depth
    y = (vs - K.cy) / K.fy * depth
    return np.stack([x, y, depth], axis=-1)


class Sample(NamedTuple):
    value: float
    grad_u: float
    grad_v: float
    valid: bool


def bilinear_sample(img: np.ndarray, p) -> Sample:
    """Bilinear intensity and its analytic gradient at a continuous pixel.

    Out-of-domain coordinates return valid=False; the caller drops the
    pixel from the valid set.
    """
    u, v = float(p[0]), float(p[1])
    h, w = img.shape
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        return Sample(math.nan, math.nan, math.nan, False)
    u0 = min(int(u), w - 2)
    v0 = min(int(v), h - 2)
    fu = u - u0
    fv = v - v0
    p00 = img[v0, u0]
    p01 = img[v0, u0 + 1]
    p10 = img[v0 + 1, u0]
    p11 = img[v0 + 1, u0 + 1]
    value = (1 - fv) * ((1 - fu) * p00 + fu * p01) + fv * ((1 - fu) * p10 + fu * p11)
    grad_u = (1 - fv) * (p01 - p00) + fv * (p11 - p10)
    grad_v = (1 - fu) * (p10 - p00) + fu * (p11 - p01)
    return Sample(float(value), float(grad_u), float(grad_v), True)


def rotation_to_quat_xyzw(R: np.ndarray) -> np.ndarray:
    """Quaternion as (x, y, z, w), w >= 0. Trajectory-file element order."""
    q = _quat_from_rotation(np.asarray(R, dtype=np.float64))
    return np.array([q[1], q[2], q[3], q[0]])


def quat_xyzw_to_rotation(q: np.ndarray) -> np.ndarray:
    x, y, z, w = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
