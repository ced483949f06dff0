"""Vectorized numpy implementation of the per-pixel hot paths.

This is the reference backend: the compiled extension must reproduce it
(up to summation order) and the public raster-level helpers in the
tracker are built directly on top of it.
"""

from __future__ import annotations

import numpy as np

name = "numpy"


def bilinear_many(img: np.ndarray, u: np.ndarray, v: np.ndarray):
    """Sample img at continuous (u, v); caller guarantees in-domain points.

    Returns (value, grad_u, grad_v) of the bilinear interpolant.
    """
    h, w = img.shape
    u0 = np.minimum(u.astype(np.int64), w - 2)
    v0 = np.minimum(v.astype(np.int64), h - 2)
    fu = u - u0
    fv = v - v0
    p00 = img[v0, u0]
    p01 = img[v0, u0 + 1]
    p10 = img[v0 + 1, u0]
    p11 = img[v0 + 1, u0 + 1]
    top = p00 + fu * (p01 - p00)
    bot = p10 + fu * (p11 - p10)
    value = top + fv * (bot - top)
    grad_u = (1 - fv) * (p01 - p00) + fv * (p11 - p10)
    grad_v = bot - top
    return value, grad_u, grad_v


def _huber_weight(absr: np.ndarray, delta: float) -> np.ndarray:
    if not np.isfinite(delta):
        return np.ones_like(absr)
    with np.errstate(divide="ignore"):
        return np.where(absr <= delta, 1.0, delta / absr)


def _huber_value(r: np.ndarray, delta: float) -> np.ndarray:
    if not np.isfinite(delta):
        return r * r
    absr = np.abs(r)
    return np.where(absr <= delta, r * r, 2.0 * delta * absr - delta * delta)


def photometric_rasters(
    frame,
    kf_img,
    inv_depth,
    weight,
    subset,
    fx,
    fy,
    cx,
    cy,
    R,
    t,
    a,
    b,
    huber_delta,
):
    """Dense residual/weight/valid rasters plus the normalized data cost.

    Returns a dict with rasters shaped like kf_img:
      r        residual (0 where invalid)
      weight   prior weight * IRLS reweighting (0 where invalid)
      valid    bool, warped inside the frame with positive depth
    and scalars cost (data term only), n_valid, plus the flattened valid
    pixel data needed for the normal equations.
    """
    h, w = kf_img.shape
    fh, fw = frame.shape
    us = np.broadcast_to(np.arange(w, dtype=np.float64)[None, :], (h, w))
    vs = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w))
    d = 1.0 / inv_depth
    X = (us - cx) / fx * d
    Y = (vs - cy) / fy * d
    xp = R[0, 0] * X + R[0, 1] * Y + R[0, 2] * d + t[0]
    yp = R[1, 0] * X + R[1, 1] * Y + R[1, 2] * d + t[1]
    zp = R[2, 0] * X + R[2, 1] * Y + R[2, 2] * d + t[2]
    zok = zp > 1e-12
    zsafe = np.where(zok, zp, 1.0)
    up = fx * xp / zsafe + cx
    vp = fy * yp / zsafe + cy
    valid = zok & (up >= 0) & (up <= fw - 1) & (vp >= 0) & (vp <= fh - 1)
    if subset is not None:
        valid &= subset
    idx = np.flatnonzero(valid.ravel())
    n_valid = idx.size

    r_map = np.zeros((h, w))
    w_map = np.zeros((h, w))
    out = {
        "r": r_map,
        "weight": w_map,
        "valid": valid,
        "n_valid": n_valid,
        "cost": np.inf,
        "flat": None,
    }
    if n_valid == 0:
        return out

    uf = up.ravel()[idx]
    vf = vp.ravel()[idx]
    val, gu, gv = bilinear_many(frame, uf, vf)
    kf_flat = kf_img.ravel()[idx]
    r = val - (a * kf_flat + b)
    absr = np.abs(r)
    w_irls = _huber_weight(absr, huber_delta)
    wp = weight.ravel()[idx]
    cost = float(np.sum(wp * _huber_value(r, huber_delta)) / n_valid)

    r_map.ravel()[idx] = r
    w_map.ravel()[idx] = wp * w_irls
    out["cost"] = cost
    out["flat"] = {
        "idx": idx,
        "r": r,
        "w": wp * w_irls,
        "gu": gu,
        "gv": gv,
        "xp": xp.ravel()[idx],
        "yp": yp.ravel()[idx],
        "zp": zp.ravel()[idx],
        "kf": kf_flat,
    }
    return out


def photometric_system(
    frame,
    kf_img,
    inv_depth,
    weight,
    subset,
    fx,
    fy,
    cx,
    cy,
    R,
    t,
    a,
    b,
    huber_delta,
    with_system=True,
):
    """Data cost and, optionally, Gauss-Newton normal equations over the
    8-dim state (wx, wy, wz, vx, vy, vz, a, b).

    Returns (cost, n_valid, H, g); H and g are None when with_system is
    False or no pixel is valid. H and g carry the 1/2 convention: the
    gradient of the data term is 2*g.
    """
    data = photometric_rasters(
        frame, kf_img, inv_depth, weight, subset, fx, fy, cx, cy, R, t, a, b, huber_delta
    )
    cost = data["cost"]
    n_valid = data["n_valid"]
    if not with_system or n_valid == 0:
        return cost, n_valid, None, None
    f = data["flat"]
    iz = 1.0 / f["zp"]
    gx = f["gu"] * fx * iz
    gy = f["gv"] * fy * iz
    gz = -(f["gu"] * fx * f["xp"] + f["gv"] * fy * f["yp"]) * iz * iz
    J = np.empty((n_valid, 8))
    J[:, 0] = f["yp"] * gz - f["zp"] * gy
    J[:, 1] = f["zp"] * gx - f["xp"] * gz
    J[:, 2] = f["xp"] * gy - f["yp"] * gx
    J[:, 3] = gx
    J[:, 4] = gy
    J[:, 5] = gz
    J[:, 6] = -f["kf"]
    J[:, 7] = -1.0
    wj = f["w"]
    H = (J * wj[:, None]).T @ J / n_valid
    g = J.T @ (wj * f["r"]) / n_valid
    return cost, n_valid, H, g


def search_depth_map(
    kf_img,
    frame,
    mu,
    sigma,
    eligible,
    fx,
    fy,
    cx,
    cy,
    R,
    t,
    a,
    b,
    d_min,
    d_max,
    n_samples,
    patch_radius,
    min_ncc,
    min_pixel_range,
    tau_lambda,
):
    """Grid search over inverse depth per eligible pixel, scoring each
    candidate by non-centered NCC over the warped patch.

    Returns rasters (d_k, tau_sq, accepted, best_score). Pixels rejected
    for any reason keep d_k = 0, tau_sq = 0, score = -2.
    """
    h, w = kf_img.shape
    fh, fw = frame.shape
    d_k = np.zeros((h, w))
    tau_sq = np.zeros((h, w))
    accepted = np.zeros((h, w), dtype=bool)
    best_map = np.full((h, w), -2.0)

    cells = np.flatnonzero(eligible.ravel())
    if cells.size == 0:
        return d_k, tau_sq, accepted, best_map
    vc, uc = np.divmod(cells, w)

    lo = np.maximum(mu.ravel()[cells] - 2.0 * sigma.ravel()[cells], d_min)
    hi = np.minimum(mu.ravel()[cells] + 2.0 * sigma.ravel()[cells], d_max)
    span = hi - lo
    usable = span > 0
    mu_c = mu.ravel()[cells]

    r = patch_radius
    offs = np.arange(-r, r + 1)
    duu, dvv = np.meshgrid(offs, offs)
    du = duu.ravel()[None, :]
    dv = dvv.ravel()[None, :]
    n_patch = du.size

    pu = uc[:, None] + du  # (N, n_patch)
    pv = vc[:, None] + dv
    lit = a * kf_img[pv, pu] + b
    lit_norm_sq = np.sum(lit * lit, axis=1)
    usable &= lit_norm_sq > 1e-300

    xn = (pu - cx) / fx
    yn = (pv - cy) / fy
    # rotated ray directions, shared by every candidate depth
    rx = R[0, 0] * xn + R[0, 1] * yn + R[0, 2]
    ry = R[1, 0] * xn + R[1, 1] * yn + R[1, 2]
    rz = R[2, 0] * xn + R[2, 1] * yn + R[2, 2]

    best_score = np.full(cells.shape, -np.inf)
    best_d = np.zeros(cells.shape)
    n_ok = np.zeros(cells.shape, dtype=np.int64)
    end_u = np.zeros((cells.size, 2))
    end_v = np.zeros((cells.size, 2))
    end_ok = np.zeros((cells.size, 2), dtype=bool)
    center = n_patch // 2

    steps = np.linspace(0.0, 1.0, n_samples)
    for j, frac in enumerate(steps):
        cand = lo + frac * span  # (N,)
        depth = 1.0 / np.where(usable, cand, 1.0)
        xp = rx * depth[:, None] + t[0]
        yp = ry * depth[:, None] + t[1]
        zp = rz * depth[:, None] + t[2]
        zok = zp > 1e-12
        zsafe = np.where(zok, zp, 1.0)
        up = fx * xp / zsafe + cx
        vp = fy * yp / zsafe + cy
        inb = zok & (up >= 0) & (up <= fw - 1) & (vp >= 0) & (vp <= fh - 1)
        if j == 0 or j == n_samples - 1:
            e = 0 if j == 0 else 1
            end_u[:, e] = up[:, center]
            end_v[:, e] = vp[:, center]
            end_ok[:, e] = zok[:, center]
        ok = usable & np.all(inb, axis=1)
        if not np.any(ok):
            continue
        uf = np.where(inb, up, 0.0)
        vf = np.where(inb, vp, 0.0)
        val, _, _ = bilinear_many(frame, uf, vf)
        num = np.sum(lit * val, axis=1)
        den_f = np.sum(val * val, axis=1)
        score = np.full(cells.shape, -np.inf)
        good = ok & (den_f > 1e-300)
        score[good] = num[good] / np.sqrt(lit_norm_sq[good] * den_f[good])
        np.clip(score, -1.0, 1.0, out=score)
        score[~good] = -np.inf
        n_ok += good
        better = (score > best_score) | (
            (score == best_score) & (np.abs(cand - mu_c) < np.abs(best_d - mu_c))
        )
        best_score = np.where(better, score, best_score)
        best_d = np.where(better, cand, best_d)

    parallax = np.hypot(end_u[:, 1] - end_u[:, 0], end_v[:, 1] - end_v[:, 0])
    ok = (
        usable
        & (n_ok >= 2)
        & np.all(end_ok, axis=1)
        & (parallax >= min_pixel_range)
        & (best_score >= min_ncc)
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = (span / np.where(parallax > 0, parallax, 1.0)) ** 2 * tau_lambda**2

    flat_ok = cells[ok]
    d_k.ravel()[flat_ok] = best_d[ok]
    tau_sq.ravel()[flat_ok] = tau[ok]
    accepted.ravel()[flat_ok] = True
    scored = cells[np.isfinite(best_score)]
    best_map.ravel()[scored] = best_score[np.isfinite(best_score)]
    return d_k, tau_sq, accepted, best_map
