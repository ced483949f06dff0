"""Direct image alignment of a frame against the keyframe.

Minimizes the inlier-weighted Huber photometric cost over an 8-dim state
(se3 twist, gain a, bias b) with Gauss-Newton steps and Levenberg-style
damping, coarse-to-fine over the image pyramid. Pose increments left-multiply
the current estimate. The data term is normalized by the valid pixel count
and an affine regularizer w*((a-1)^2 + b^2) keeps the lighting parameters
near identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _kernels
from .geometry import Pose, compose, inverse, se3_exp
from .image_pyramid import box_downsample


@dataclass(frozen=True)
class AffineLight:
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.a <= 0:
            raise ValueError("gain must be positive")


@dataclass(frozen=True)
class TrackConfig:
    huber_delta: float = 0.1  # luminance units
    affine_weight: float = 1e-2  # on the |V|-normalized objective
    max_iters: int = 30  # per pyramid level
    convergence_tol: float = 1e-7  # on the 8-dim increment norm
    min_valid_ratio: float = 0.2  # below this, tracking counts as failed
    levels: int = 4
    motion_model_enabled: bool = True

    def __post_init__(self):
        if min(self.huber_delta, self.affine_weight, self.convergence_tol) <= 0:
            raise ValueError("tracking thresholds must be positive")
        if self.max_iters < 1 or self.levels < 1:
            raise ValueError("max_iters and levels must be at least 1")
        if not 0 < self.min_valid_ratio <= 1:
            raise ValueError("min_valid_ratio must be in (0, 1]")


@dataclass
class TrackResult:
    pose: Pose  # keyframe -> frame
    light: AffineLight
    valid_ratio: float
    final_cost: float
    converged: bool
    iterations: int = 0
    cost_trace: List[float] = field(default_factory=list)


class TrackingFailure(RuntimeError):
    pass


def _level_maps(kf, level: int, use_weights: bool):
    """Keyframe image/intrinsics plus inverse depth and pixel weights at a
    pyramid level; the level-0 filter rasters are box-averaged down."""
    img, K = kf.pyramid[level]
    inv_depth = kf.filter.mu
    weight = kf.filter.inlier_prob() if use_weights else np.ones_like(inv_depth)
    for _ in range(level):
        inv_depth = box_downsample(inv_depth)
        weight = box_downsample(weight)
    return img, K, inv_depth, weight


def residuals(frame_img, kf, pose: Pose, light: AffineLight, level: int = 0,
              use_weights: bool = True, subset=None):
    """Per-pixel residual, weight (prior * IRLS) and validity rasters for
    one pyramid level, plus the total cost.

    Raises TrackingFailure when no keyframe pixel lands inside the frame.
    """
    img, K, inv_depth, weight = _level_maps(kf, level, use_weights)
    cfg = TrackConfig()
    data = _kernels.photometric_rasters(
        frame_img, img, inv_depth, weight, subset,
        K.fx, K.fy, K.cx, K.cy, pose.rotation, pose.translation,
        light.a, light.b, cfg.huber_delta,
    )
    if data["n_valid"] == 0:
        raise TrackingFailure("no valid pixels: frame does not overlap keyframe")
    cost = data["cost"] + cfg.affine_weight * ((light.a - 1.0) ** 2 + light.b**2)
    return data["r"], data["weight"], data["valid"], cost, data["n_valid"]


def _total_cost(frame_img, img, K, inv_depth, weight, subset, pose, a, b, cfg,
                with_system=False):
    cost, n_valid, H, g = _kernels.photometric_system(
        frame_img, img, inv_depth, weight, subset,
        K.fx, K.fy, K.cx, K.cy, pose.rotation, pose.translation,
        a, b, cfg.huber_delta, with_system=with_system,
    )
    reg = cfg.affine_weight * ((a - 1.0) ** 2 + b * b)
    return cost + reg, n_valid, H, g


def cost_gradient(frame_img, kf, pose, light, cfg: TrackConfig, level: int = 0,
                  use_weights: bool = True, subset=None, data_term_only: bool = False):
    """Analytic gradient of the tracking objective w.r.t. the 8-dim state."""
    img, K, inv_depth, weight = _level_maps(kf, level, use_weights)
    _, n_valid, _, g = _kernels.photometric_system(
        frame_img, img, inv_depth, weight, subset,
        K.fx, K.fy, K.cx, K.cy, pose.rotation, pose.translation,
        light.a, light.b, cfg.huber_delta, with_system=True,
    )
    if n_valid == 0:
        raise TrackingFailure("no valid pixels")
    grad = 2.0 * g
    if not data_term_only:
        grad[6] += 2.0 * cfg.affine_weight * (light.a - 1.0)
        grad[7] += 2.0 * cfg.affine_weight * light.b
    return grad


def solve_level(frame_img, kf, init_pose: Pose, init_light: AffineLight,
                cfg: TrackConfig, level: int = 0, use_weights: bool = True,
                subset=None) -> TrackResult:
    """Damped Gauss-Newton at a single pyramid level.

    Accepted steps never increase the total cost; when no damping value
    yields a decrease the best state so far is returned with
    converged=False.
    """
    img, K, inv_depth, weight = _level_maps(kf, level, use_weights)
    n_total = img.size if subset is None else int(np.count_nonzero(subset))

    pose = init_pose
    a, b = init_light.a, init_light.b
    cost, n_valid, _, _ = _total_cost(
        frame_img, img, K, inv_depth, weight, subset, pose, a, b, cfg
    )
    if n_valid == 0:
        raise TrackingFailure(f"level {level}: no valid pixels at the initial pose")
    trace = [cost]
    converged = False
    iters = 0
    for iters in range(1, cfg.max_iters + 1):
        _, n_valid, H, g = _total_cost(
            frame_img, img, K, inv_depth, weight, subset, pose, a, b, cfg,
            with_system=True,
        )
        H = H.copy()
        g = g.copy()
        H[6, 6] += cfg.affine_weight
        H[7, 7] += cfg.affine_weight
        g[6] += cfg.affine_weight * (a - 1.0)
        g[7] += cfg.affine_weight * b

        lam = 0.0
        accepted = False
        diag = np.diag(H).copy()
        diag[diag <= 0] = 1.0
        for _ in range(14):
            try:
                delta = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None and np.all(np.isfinite(delta)):
                cand_pose = compose(se3_exp(delta[:6]), pose)
                cand_a = max(a + delta[6], 1e-3)
                cand_b = b + delta[7]
                cand_cost, cand_valid, _, _ = _total_cost(
                    frame_img, img, K, inv_depth, weight, subset,
                    cand_pose, cand_a, cand_b, cfg,
                )
                if cand_valid > 0 and cand_cost <= cost + 1e-15:
                    pose, a, b, cost = cand_pose, cand_a, cand_b, cand_cost
                    n_valid = cand_valid
                    accepted = True
                    break
            lam = 1e-4 if lam == 0.0 else lam * 10.0
        if not accepted:
            break
        trace.append(cost)
        if np.linalg.norm(delta) < cfg.convergence_tol:
            converged = True
            break

    return TrackResult(
        pose=pose,
        light=AffineLight(a, b),
        valid_ratio=n_valid / max(n_total, 1),
        final_cost=cost,
        converged=converged,
        iterations=iters,
        cost_trace=trace,
    )


def predict_pose(pose_history: Optional[List[Pose]], motion_model: bool) -> Pose:
    """Initial keyframe->frame pose from recent estimates against the same
    keyframe: replay the last inter-frame motion when enabled."""
    if not pose_history:
        return Pose.identity()
    last = pose_history[-1]
    if motion_model and len(pose_history) >= 2:
        step = compose(last, inverse(pose_history[-2]))
        return compose(step, last)
    return last


def track(frame_pyr, kf, cfg: TrackConfig, pose_history=None,
          init_light: Optional[AffineLight] = None,
          use_weights: bool = True) -> TrackResult:
    """Coarse-to-fine alignment over the configured pyramid levels."""
    n_levels = min(cfg.levels, len(kf.pyramid), len(frame_pyr))
    pose = predict_pose(pose_history, cfg.motion_model_enabled)
    light = init_light or AffineLight()
    result = None
    for level in range(n_levels - 1, -1, -1):
        result = solve_level(
            frame_pyr[level][0], kf, pose, light, cfg,
            level=level, use_weights=use_weights,
        )
        pose, light = result.pose, result.light
    if result.valid_ratio < cfg.min_valid_ratio:
        raise TrackingFailure(
            f"valid ratio {result.valid_ratio:.3f} below {cfg.min_valid_ratio}"
        )
    return result
