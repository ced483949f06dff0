"""Trajectory and semantic-segmentation metrics.

ATE RMSE follows the TUM tooling: closed-form least-squares alignment of
the translation components (rigid, optionally with a uniform scale), then
the root-mean-square of the per-frame translation error. Snippet mode
chops a sequence into fixed-length windows, aligns each one independently
and reports mean and standard deviation across windows.
"""

from __future__ import annotations

import warnings
from typing import List, Tuple

import numpy as np

from .dataset_io import Trajectory
from .geometry import Pose

ALIGN_MODES = ("none", "se3", "sim3")


class EvalError(ValueError):
    pass


def _translations(traj: Trajectory) -> np.ndarray:
    return np.array([pose.translation for _, pose in traj])


def umeyama(src: np.ndarray, dst: np.ndarray, with_scale: bool):
    """Least-squares s, R, t with dst ~ s * R @ src + t."""
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    xs = src - mu_s
    xd = dst - mu_d
    cov = xd.T @ xs / src.shape[0]
    U, D, Vt = np.linalg.svd(cov)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    if np.linalg.matrix_rank(cov) < 2:
        warnings.warn("degenerate (collinear) trajectory: alignment is not unique")
    R = U @ S @ Vt
    if with_scale:
        var_s = float((xs**2).sum()) / src.shape[0]
        if var_s <= 0:
            raise EvalError("alignment impossible: zero-variance trajectory")
        s = float(np.trace(np.diag(D) @ S)) / var_s
    else:
        s = 1.0
    t = mu_d - s * R @ mu_s
    return s, R, t


def align(est: Trajectory, gt: Trajectory, mode: str) -> Trajectory:
    """Transformed copy of est best matching gt under the requested model."""
    if mode not in ALIGN_MODES:
        raise EvalError(f"unknown alignment mode {mode!r}")
    if len(est) != len(gt):
        raise EvalError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if any(abs(a[0] - b[0]) > 1e-6 for a, b in zip(est, gt)):
        raise EvalError("trajectory timestamps do not match")
    if mode == "none":
        return list(est)
    if mode == "sim3" and len(est) < 3:
        raise EvalError("sim3 alignment needs at least 3 poses")
    s, R, t = umeyama(_translations(est), _translations(gt), with_scale=(mode == "sim3"))
    out: Trajectory = []
    for ts, pose in est:
        out.append((ts, Pose(R @ pose.rotation, s * R @ pose.translation + t)))
    return out


def ate_rmse(est: Trajectory, gt: Trajectory, mode: str = "se3") -> float:
    aligned = align(est, gt, mode)
    err = _translations(aligned) - _translations(gt)
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def split_snippets(traj: Trajectory, n: int) -> List[Trajectory]:
    """Consecutive n-frame windows; a trailing partial window is dropped."""
    if n < 2:
        raise EvalError("snippets need at least 2 frames")
    return [traj[i : i + n] for i in range(0, len(traj) - n + 1, n)]


def snippet_ate(est: Trajectory, gt: Trajectory, n: int,
                mode: str = "sim3") -> Tuple[float, float, int]:
    """Per-window ATE RMSE aggregated as (mean, std, count)."""
    if len(est) != len(gt):
        raise EvalError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    vals = [
        ate_rmse(e, g, mode)
        for e, g in zip(split_snippets(est, n), split_snippets(gt, n))
    ]
    if not vals:
        raise EvalError("sequence shorter than one snippet")
    arr = np.asarray(vals)
    return float(arr.mean()), float(arr.std()), len(vals)


def miou(pred_labels: np.ndarray, gt_labels: np.ndarray, n_classes: int) -> float:
    """Mean IoU over the classes present in gt."""
    pred = np.asarray(pred_labels).ravel()
    gt = np.asarray(gt_labels).ravel()
    if pred.shape != gt.shape:
        raise EvalError("label rasters differ in size")
    ious = []
    for c in range(n_classes):
        gt_c = gt == c
        if not np.any(gt_c):
            continue
        pred_c = pred == c
        inter = np.count_nonzero(gt_c & pred_c)
        union = np.count_nonzero(gt_c | pred_c)
        ious.append(inter / union)
    if not ious:
        raise EvalError("no classes present in ground truth")
    return float(np.mean(ious))
