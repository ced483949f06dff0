"""Per-pixel inlier/depth model over inverse depth.

Each pixel carries a Beta(alpha, beta) belief over its inlier ratio and a
Gaussian(mu, sigma^2) belief over its inverse depth. A measurement is
modelled as Gaussian around the true value when it is an inlier and
uniform on [d_min, d_max] when it is an outlier; the exact posterior is a
two-component mixture which we collapse back to Beta x Gaussian by
matching the first two moments of both marginals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SIGMA_FLOOR = 1e-7
_AB_FLOOR = 1e-3


@dataclass(frozen=True)
class FilterParams:
    beta_strength: float = 10.0  # alpha0 + beta0
    sigma0_pct: float = 0.2  # prior std as a fraction of prior inverse depth
    d_min: float = 1e-3  # inverse-depth support, 1/m
    d_max: float = 2.0
    tau_lambda: float = 1.0  # assumed matching noise, pixels

    def __post_init__(self):
        if self.beta_strength <= 0 or self.sigma0_pct <= 0 or self.tau_lambda <= 0:
            raise ValueError("filter parameters must be positive")
        if not 0 <= self.d_min < self.d_max:
            raise ValueError("need 0 <= d_min < d_max")


@dataclass
class FilterState:
    """Raster-valued model parameters, one value of each per pixel."""

    alpha: np.ndarray
    beta: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def copy(self) -> "FilterState":
        return FilterState(
            self.alpha.copy(), self.beta.copy(), self.mu.copy(), self.sigma.copy()
        )

    def inlier_prob(self) -> np.ndarray:
        return self.alpha / (self.alpha + self.beta)


@dataclass(frozen=True)
class Measurement:
    d_k: float  # inverse-depth observation
    tau_sq: float  # its variance

    def __post_init__(self):
        if not (self.tau_sq > 0 and math.isfinite(self.d_k)):
            raise ValueError("measurement needs finite d_k and positive variance")


def init_state(priors, params: FilterParams) -> FilterState:
    """Priors from the predictor: Beta mean = mask value, Gaussian mean =
    inverse of predicted depth, sigma0 proportional to it."""
    mask = priors.mask
    if mask is None:
        mask = np.ones_like(priors.depth)
    s = params.beta_strength
    alpha = np.maximum(s * mask, _AB_FLOOR)
    beta = np.maximum(s * (1.0 - mask), _AB_FLOOR)
    mu = np.clip(1.0 / priors.depth, params.d_min, params.d_max)
    sigma = params.sigma0_pct * mu
    return FilterState(alpha, beta, mu, sigma)


def inlier_prob(alpha: float, beta: float) -> float:
    return alpha / (alpha + beta)


def measurement_variance(depth_range, pixel_range, params: FilterParams):
    """Variance of one grid-search measurement: the search span mapped
    through the (numerical) pixels-per-inverse-depth Jacobian, scaled by
    the assumed one-pixel matching noise."""
    return (depth_range / pixel_range) ** 2 * params.tau_lambda**2


def update(alpha, beta, mu, sigma, d_k, tau_sq, params: FilterParams):
    """One measurement update for a single pixel.

    Returns (alpha, beta, mu, sigma, accepted). accepted is False when the
    measurement has numerically vanishing likelihood under both the inlier
    and the outlier hypothesis, in which case the state is unchanged.
    """
    var = sigma * sigma
    total = var + tau_sq
    uniform = 1.0 / (params.d_max - params.d_min) if params.d_min <= d_k <= params.d_max else 0.0
    w1 = alpha / (alpha + beta) * math.exp(-0.5 * (d_k - mu) ** 2 / total) / math.sqrt(
        2.0 * math.pi * total
    )
    w2 = beta / (alpha + beta) * uniform
    z = w1 + w2
    if z < 1e-300:
        return alpha, beta, mu, sigma, False
    c1 = w1 / z
    c2 = w2 / z

    s_sq = 1.0 / (1.0 / var + 1.0 / tau_sq)
    m = s_sq * (mu / var + d_k / tau_sq)
    mu_new = c1 * m + c2 * mu
    second = c1 * (s_sq + m * m) + c2 * (var + mu * mu)
    var_new = second - mu_new * mu_new

    denom1 = alpha + beta + 1.0
    denom2 = (alpha + beta + 1.0) * (alpha + beta + 2.0)
    f = c1 * (alpha + 1.0) / denom1 + c2 * alpha / denom1
    e = (
        c1 * (alpha + 1.0) * (alpha + 2.0) / denom2
        + c2 * alpha * (alpha + 1.0) / denom2
    )
    alpha_new = (e - f) / (f - e / f)
    beta_new = alpha_new * (1.0 - f) / f

    mu_new = min(max(mu_new, params.d_min), params.d_max)
    sigma_new = max(math.sqrt(max(var_new, 0.0)), SIGMA_FLOOR)
    return alpha_new, beta_new, mu_new, sigma_new, True


def update_map(state: FilterState, d_k, tau_sq, measured, params: FilterParams):
    """Vectorized update over a raster. measured marks pixels that received
    a measurement this frame; everything else is left untouched.

    Returns (new_state, accepted) where accepted flags the measured pixels
    that were actually absorbed.
    """
    a = state.alpha
    b = state.beta
    mu = state.mu
    var = state.sigma**2

    with np.errstate(divide="ignore", invalid="ignore", over="ignore", under="ignore"):
        total = var + tau_sq
        in_support = (d_k >= params.d_min) & (d_k <= params.d_max)
        uniform = in_support / (params.d_max - params.d_min)
        w1 = a / (a + b) * np.exp(-0.5 * (d_k - mu) ** 2 / total) / np.sqrt(
            2.0 * np.pi * total
        )
        w2 = b / (a + b) * uniform
        z = w1 + w2
        accepted = measured & (z > 1e-300) & (tau_sq > 0)
        z = np.where(accepted, z, 1.0)
        c1 = np.where(accepted, w1 / z, 0.0)
        c2 = np.where(accepted, w2 / z, 0.0)

        s_sq = 1.0 / (1.0 / var + 1.0 / tau_sq)
        m = s_sq * (mu / var + d_k / tau_sq)
        mu_new = c1 * m + c2 * mu
        second = c1 * (s_sq + m * m) + c2 * (var + mu * mu)
        var_new = second - mu_new * mu_new

        denom1 = a + b + 1.0
        denom2 = denom1 * (a + b + 2.0)
        f = c1 * (a + 1.0) / denom1 + c2 * a / denom1
        e = c1 * (a + 1.0) * (a + 2.0) / denom2 + c2 * a * (a + 1.0) / denom2
        f = np.where(accepted, f, 0.5)
        e = np.where(accepted, e, 0.3)  # placeholder; masked out below
        alpha_new = (e - f) / (f - e / f)
        beta_new = alpha_new * (1.0 - f) / f

        out = state.copy()
        out.alpha = np.where(accepted, alpha_new, a)
        out.beta = np.where(accepted, beta_new, b)
        out.mu = np.where(accepted, np.clip(mu_new, params.d_min, params.d_max), mu)
        out.sigma = np.where(
            accepted,
            np.maximum(np.sqrt(np.maximum(var_new, 0.0)), SIGMA_FLOOR),
            state.sigma,
        )
    return out, accepted


def dump_state(state: FilterState, out_dir, frame_index: int):
    """Debug rasters: alpha, beta, mu, sigma as .f32 files."""
    import os

    from .dataset_io import write_f32

    for name in ("alpha", "beta", "mu", "sigma"):
        sub = os.path.join(out_dir, name)
        os.makedirs(sub, exist_ok=True)
        write_f32(getattr(state, name), os.path.join(sub, f"{frame_index:06d}.f32"))
