"""Keyframe lifecycle: insertion, switching criteria, and semantic fusion.

A keyframe owns the depth-filter state initialized from its priors; when
it is replaced, the class probabilities of its confidently-inlier pixels
are reprojected into the new keyframe and multiplied with the fresh
prediction (then renormalized), occlusions resolved by a depth z-buffer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dataset_io import PriorBundle, SequenceFrame
from .depth_filter import FilterParams, FilterState, init_state
from .geometry import Intrinsics, Pose
from .image_pyramid import Pyramid, build_pyramid, to_gray

PROPAGATE_INLIER_MIN = 0.6
PROB_FLOOR = 1e-6


@dataclass(frozen=True)
class KfCriteria:
    max_frames: int = 8
    min_valid_ratio: float = 0.7

    def __post_init__(self):
        if self.max_frames < 1:
            raise ValueError("max_frames must be at least 1")
        if not 0 < self.min_valid_ratio < 1:
            raise ValueError("min_valid_ratio must be in (0, 1)")


def should_insert(frames_since_kf: int, last_valid_ratio: float,
                  crit: KfCriteria) -> bool:
    return frames_since_kf >= crit.max_frames or last_valid_ratio < crit.min_valid_ratio


@dataclass
class Keyframe:
    pose: Pose  # world-from-camera
    pyramid: Pyramid
    color: np.ndarray
    sem_probs: Optional[np.ndarray]  # (C, H, W)
    filter: FilterState
    frame_index: int
    timestamp: float = 0.0

    @property
    def gray(self) -> np.ndarray:
        return self.pyramid[0][0]

    @property
    def intrinsics(self) -> Intrinsics:
        return self.pyramid[0][1]


class MissingPriors(RuntimeError):
    pass


def insert_keyframe(frame: SequenceFrame, priors: Optional[PriorBundle],
                    world_pose: Pose, params: FilterParams, K: Intrinsics,
                    n_levels: int = 4, use_mask_prior: bool = True) -> Keyframe:
    """Build a keyframe from a frame and its priors.

    A missing mask falls back to an all-ones prior; a missing depth cannot
    be worked around and raises.
    """
    if priors is None or priors.depth is None:
        raise MissingPriors(f"frame {frame.index}: keyframe requires a depth prior")
    mask = priors.mask if (use_mask_prior and priors.mask is not None) else None
    effective = PriorBundle(priors.depth, mask, priors.sem)
    gray = to_gray(frame.image)
    return Keyframe(
        pose=world_pose,
        pyramid=build_pyramid(gray, K, n_levels),
        color=frame.image,
        sem_probs=None if priors.sem is None else priors.sem.copy(),
        filter=init_state(effective, params),
        frame_index=frame.index,
        timestamp=frame.timestamp,
    )


def propagate_semantics(old_kf: Keyframe, new_kf: Keyframe, rel_pose: Pose,
                        inlier_min: float = PROPAGATE_INLIER_MIN) -> np.ndarray:
    """Fused class probabilities for the new keyframe.

    Old-keyframe pixels with mean inlier probability >= inlier_min are
    projected with their current depth estimate (nearest target pixel,
    z-buffered); wherever a pixel lands, the propagated distribution is
    multiplied with the new prediction and renormalized. Unhit pixels keep
    the raw prediction.
    """
    pred = new_kf.sem_probs
    if pred is None or old_kf.sem_probs is None:
        return None if pred is None else pred.copy()
    n_classes, h, w = pred.shape
    K = new_kf.intrinsics

    conf = old_kf.filter.inlier_prob() >= inlier_min
    src = np.flatnonzero(conf.ravel())
    fused = pred.copy()
    if src.size == 0:
        return fused

    sv, su = np.divmod(src, w)
    depth = 1.0 / old_kf.filter.mu.ravel()[src]
    Kold = old_kf.intrinsics
    x = (su - Kold.cx) / Kold.fx * depth
    y = (sv - Kold.cy) / Kold.fy * depth
    pts = np.stack([x, y, depth], axis=1) @ rel_pose.rotation.T + rel_pose.translation
    z = pts[:, 2]
    ok = z > 1e-12
    tu = np.full(src.shape, -1, dtype=np.int64)
    tv = np.full(src.shape, -1, dtype=np.int64)
    tu[ok] = np.round(K.fx * pts[ok, 0] / z[ok] + K.cx).astype(np.int64)
    tv[ok] = np.round(K.fy * pts[ok, 1] / z[ok] + K.cy).astype(np.int64)
    ok &= (tu >= 0) & (tu < w) & (tv >= 0) & (tv < h)
    if not np.any(ok):
        return fused

    target = tv[ok] * w + tu[ok]
    zs = z[ok]
    srcs = src[ok]
    # deterministic z-buffer: group by target pixel, keep the nearest hit
    order = np.lexsort((zs, target))
    target = target[order]
    zs = zs[order]
    srcs = srcs[order]
    uniq, first = np.unique(target, return_index=True)
    winners = srcs[first]

    old_flat = old_kf.sem_probs.reshape(n_classes, -1)
    prop = np.maximum(old_flat[:, winners], PROB_FLOOR)
    pred_flat = fused.reshape(n_classes, -1)
    product = prop * np.maximum(pred_flat[:, uniq], PROB_FLOOR)
    product /= product.sum(axis=0, keepdims=True)
    pred_flat[:, uniq] = product
    return fused
