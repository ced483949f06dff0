"""Discrete re-estimation of keyframe depth by patch correlation.

For each pixel the inverse-depth interval mu +- 2*sigma (clipped to the
filter support) is divided into a small grid; each candidate warps the
3x3 patch around the pixel into the current frame with one shared depth
and is scored by non-centered NCC against the lighting-corrected keyframe
patch. The winning candidate becomes a depth measurement whose variance
follows from the pixel span of the grid on the epipolar line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .depth_filter import FilterParams, Measurement, measurement_variance
from .geometry import Pose
from .tracker import AffineLight

_MIN_PATCH_VAR = 1e-12  # gate for exactly-constant patches


@dataclass(frozen=True)
class SearchConfig:
    n_samples: int = 16
    patch_radius: int = 1
    min_ncc: float = 0.5
    min_pixel_range: float = 1.0  # pixels of parallax across the grid

    def __post_init__(self):
        if self.n_samples < 3:
            raise ValueError("need at least 3 grid samples")
        if not -1 < self.min_ncc < 1:
            raise ValueError("min_ncc must be in (-1, 1)")
        if self.patch_radius < 1 or self.min_pixel_range <= 0:
            raise ValueError("invalid patch or parallax settings")


def depth_grid(mu: float, sigma: float, cfg: SearchConfig, params: FilterParams):
    """Candidate inverse depths for one pixel, or None when the clipped
    interval is empty."""
    lo = max(mu - 2.0 * sigma, params.d_min)
    hi = min(mu + 2.0 * sigma, params.d_max)
    if hi <= lo:
        return None
    return np.linspace(lo, hi, cfg.n_samples)


def ncc(patch_ref: np.ndarray, patch_obs: np.ndarray) -> float:
    """Non-centered normalized cross-correlation of two patches, clamped to
    [-1, 1]. Raises on a zero-norm patch (score undefined)."""
    x = np.asarray(patch_ref, dtype=np.float64).ravel()
    y = np.asarray(patch_obs, dtype=np.float64).ravel()
    nx = float(np.dot(x, x))
    ny = float(np.dot(y, y))
    if nx <= 0.0 or ny <= 0.0:
        raise ValueError("zero-norm patch: NCC undefined")
    return float(np.clip(np.dot(x, y) / math.sqrt(nx * ny), -1.0, 1.0))


def patch_variance_map(img: np.ndarray, radius: int) -> np.ndarray:
    """Intensity variance of the (2r+1)^2 patch around every pixel (border
    pixels, where the patch leaves the image, get 0)."""
    h, w = img.shape
    size = 2 * radius + 1
    out = np.zeros((h, w))
    if h < size or w < size:
        return out
    from numpy.lib.stride_tricks import sliding_window_view

    win = sliding_window_view(img, (size, size))
    mean = win.mean(axis=(2, 3))
    var = (win**2).mean(axis=(2, 3)) - mean**2
    out[radius : h - radius, radius : w - radius] = var
    return out


def eligible_pixels(kf_img: np.ndarray, cfg: SearchConfig, stride: int = 1,
                    phase: int = 0) -> np.ndarray:
    """Search centers: full patch inside the image, non-degenerate texture,
    and the optional interleaved stride pattern."""
    h, w = kf_img.shape
    mask = np.zeros((h, w), dtype=bool)
    r = cfg.patch_radius
    mask[r : h - r, r : w - r] = True
    mask &= patch_variance_map(kf_img, r) > _MIN_PATCH_VAR
    if stride > 1:
        us = np.arange(w)[None, :]
        vs = np.arange(h)[:, None]
        mask &= (us + vs + phase) % stride == 0
    return mask


def search_frame(kf, frame_img: np.ndarray, pose: Pose, light: AffineLight,
                 cfg: SearchConfig, params: FilterParams, stride: int = 1,
                 phase: int = 0):
    """Full-raster search at pyramid level 0.

    Returns (d_k, tau_sq, accepted, score) rasters; accepted marks pixels
    whose winner passed the NCC and parallax gates.
    """
    img, K = kf.pyramid[0]
    eligible = eligible_pixels(img, cfg, stride=stride, phase=phase)
    return _kernels.search_depth_map(
        img, frame_img, kf.filter.mu, kf.filter.sigma, eligible,
        K.fx, K.fy, K.cx, K.cy, pose.rotation, pose.translation,
        light.a, light.b, params.d_min, params.d_max,
        cfg.n_samples, cfg.patch_radius, cfg.min_ncc, cfg.min_pixel_range,
        params.tau_lambda,
    )


def search_pixel(kf, frame_img: np.ndarray, pose: Pose, light: AffineLight,
                 p, state_px, cfg: SearchConfig,
                 params: FilterParams) -> Optional[Measurement]:
    """Reference single-pixel search; the raster path must agree with it.

    state_px is (mu, sigma) for the pixel. Returns None when the pixel
    yields no usable measurement.
    """
    from .geometry import bilinear_sample

    u, v = int(p[0]), int(p[1])
    img, K = kf.pyramid[0]
    h, w = img.shape
    r = cfg.patch_radius
    if not (r <= u < w - r and r <= v < h - r):
        return None
    mu, sigma = state_px
    grid = depth_grid(mu, sigma, cfg, params)
    if grid is None:
        return None

    patch = img[v - r : v + r + 1, u - r : u + r + 1]
    if float(np.var(patch)) <= _MIN_PATCH_VAR:
        return None
    lit = light.a * patch.ravel() + light.b
    if float(np.dot(lit, lit)) <= 0.0:
        return None

    offs = [(du, dv) for dv in range(-r, r + 1) for du in range(-r, r + 1)]
    best_score = -np.inf
    best_d = None
    n_ok = 0
    for cand in grid:
        vals = []
        ok = True
        for du, dv in offs:
            xn = (u + du - K.cx) / K.fx
            yn = (v + dv - K.cy) / K.fy
            X = np.array([xn, yn, 1.0]) / cand
            Xp = pose.rotation @ X + pose.translation
            if Xp[2] <= 1e-12:
                ok = False
                break
            uu = K.fx * Xp[0] / Xp[2] + K.cx
            vv = K.fy * Xp[1] / Xp[2] + K.cy
            s = bilinear_sample(frame_img, (uu, vv))
            if not s.valid:
                ok = False
                break
            vals.append(s.value)
        if not ok:
            continue
        vals = np.asarray(vals)
        if float(np.dot(vals, vals)) <= 0.0:
            continue
        score = ncc(lit.reshape(2 * r + 1, -1), vals)
        n_ok += 1
        if score > best_score or (
            score == best_score and abs(cand - mu) < abs(best_d - mu)
        ):
            best_score = score
            best_d = cand
    if n_ok < 2 or best_score < cfg.min_ncc:
        return None

    # parallax of the grid endpoints at the patch center
    ends = []
    for cand in (grid[0], grid[-1]):
        xn = (u - K.cx) / K.fx
        yn = (v - K.cy) / K.fy
        Xp = pose.rotation @ (np.array([xn, yn, 1.0]) / cand) + pose.translation
        if Xp[2] <= 1e-12:
            return None
        ends.append((K.fx * Xp[0] / Xp[2] + K.cx, K.fy * Xp[1] / Xp[2] + K.cy))
    parallax = math.hypot(ends[1][0] - ends[0][0], ends[1][1] - ends[0][1])
    if parallax < cfg.min_pixel_range:
        return None
    tau = measurement_variance(float(grid[-1] - grid[0]), parallax, params)
    return Measurement(d_k=float(best_d), tau_sq=float(tau))
