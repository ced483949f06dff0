"""Gray-image helpers and box-average pyramids for coarse-to-fine alignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Intrinsics


class PyramidError(ValueError):
    pass


def to_gray(img: np.ndarray) -> np.ndarray:
    """8-bit grayscale or RGB raster -> float64 luminance in [0, 1]."""
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise PyramidError(f"expected 8-bit input, got {img.dtype}")
    if img.ndim == 2:
        return img.astype(np.float64) / 255.0
    if img.ndim == 3 and img.shape[2] == 3:
        r, g, b = img[..., 0], img[..., 1], img[..., 2]
        return (0.299 * r + 0.587 * g + 0.114 * b) / 255.0
    raise PyramidError(f"unsupported image shape {img.shape}")


def box_downsample(img: np.ndarray) -> np.ndarray:
    """Halve both dimensions (floor) by averaging 2x2 blocks."""
    h, w = img.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise PyramidError("image too small to downsample")
    return img[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def scale_intrinsics(K: Intrinsics, level: int, width: int, height: int) -> Intrinsics:
    s = 2.0**level
    return Intrinsics(
        fx=K.fx / s,
        fy=K.fy / s,
        cx=(K.cx + 0.5) / s - 0.5,
        cy=(K.cy + 0.5) / s - 0.5,
        width=width,
        height=height,
    )


@dataclass(frozen=True)
class Pyramid:
    """Level 0 is full resolution; each level halves width and height."""

    levels: tuple  # of (image, Intrinsics)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def build_pyramid(img: np.ndarray, K: Intrinsics, n_levels: int) -> Pyramid:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise PyramidError("pyramid input must be a single-channel image")
    if n_levels < 1:
        raise PyramidError("need at least one level")
    if (img.shape[1] >> (n_levels - 1)) < 8 or (img.shape[0] >> (n_levels - 1)) < 8:
        raise PyramidError(
            f"{n_levels} levels too deep for a {img.shape[1]}x{img.shape[0]} image"
        )
    levels = [(img, scale_intrinsics(K, 0, img.shape[1], img.shape[0]))]
    cur = img
    for lvl in range(1, n_levels):
        cur = box_downsample(cur)
        levels.append((cur, scale_intrinsics(K, lvl, cur.shape[1], cur.shape[0])))
    return Pyramid(tuple(levels))


def image_gradient(img: np.ndarray):
    """Central differences in the interior, one-sided at the borders."""
    img = np.asarray(img, dtype=np.float64)
    gx = np.empty_like(img)
    gy = np.empty_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gx[:, 0] = img[:, 1] - img[:, 0]
    gx[:, -1] = img[:, -1] - img[:, -2]
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    gy[0, :] = img[1, :] - img[0, :]
    gy[-1, :] = img[-1, :] - img[-2, :]
    return gx, gy
