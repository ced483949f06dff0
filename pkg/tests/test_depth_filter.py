"""The posterior update is pinned by two independent oracles: the exact
two-hypothesis mixture moments (recomputed here from scratch) and dense
numerical integration of the unnormalized posterior over (depth, rho)."""

import math

import numpy as np
import pytest

from maskvo.dataset_io import PriorBundle
from maskvo.depth_filter import (
    FilterParams,
    FilterState,
    Measurement,
    init_state,
    inlier_prob,
    measurement_variance,
    update,
    update_map,
)

PARAMS = FilterParams(d_min=0.05, d_max=2.0)


def mixture_moments(alpha, beta, mu, sigma, d_k, tau_sq, params):
    """Exact posterior moments, independently derived.

    The inlier branch contributes rho * N(d_k; dhat, tau^2) which, against
    the Gaussian prior, gives evidence N(d_k; mu, sigma^2 + tau^2) and a
    Gaussian posterior in dhat; the rho factor shifts the Beta to
    (alpha+1, beta). The outlier branch is flat in dhat and shifts the
    Beta to (alpha, beta+1).
    """
    var = sigma**2
    evid1 = math.exp(-0.5 * (d_k - mu) ** 2 / (var + tau_sq)) / math.sqrt(
        2 * math.pi * (var + tau_sq)
    )
    w1 = alpha / (alpha + beta) * evid1
    w2 = beta / (alpha + beta) / (params.d_max - params.d_min)
    c1 = w1 / (w1 + w2)
    c2 = w2 / (w1 + w2)
    post_var = 1.0 / (1.0 / var + 1.0 / tau_sq)
    post_mean = post_var * (mu / var + d_k / tau_sq)

    mean_d = c1 * post_mean + c2 * mu
    second_d = c1 * (post_var + post_mean**2) + c2 * (var + mu**2)

    def beta_m1(a, b):
        return a / (a + b)

    def beta_m2(a, b):
        return a * (a + 1) / ((a + b) * (a + b + 1))

    mean_r = c1 * beta_m1(alpha + 1, beta) + c2 * beta_m1(alpha, beta + 1)
    second_r = c1 * beta_m2(alpha + 1, beta) + c2 * beta_m2(alpha, beta + 1)
    return mean_d, second_d - mean_d**2, mean_r, second_r


def integration_moments(alpha, beta, mu, sigma, d_k, tau_sq, params, n=2000):
    """Trapezoid integration of the unnormalized joint posterior."""
    lo = min(mu, d_k) - 8 * math.sqrt(sigma**2 + tau_sq)
    hi = max(mu, d_k) + 8 * math.sqrt(sigma**2 + tau_sq)
    d = np.linspace(lo, hi, n)[:, None]
    rho = np.linspace(1e-9, 1 - 1e-9, n)[None, :]
    lik = rho * np.exp(-0.5 * (d_k - d) ** 2 / tau_sq) / math.sqrt(
        2 * math.pi * tau_sq
    ) + (1 - rho) / (params.d_max - params.d_min)
    prior = (
        np.exp(-0.5 * (d - mu) ** 2 / sigma**2)
        * rho ** (alpha - 1)
        * (1 - rho) ** (beta - 1)
    )
    post = lik * prior

    def integrate(f):
        return np.trapezoid(np.trapezoid(f, rho[0], axis=1), d[:, 0])

    z = integrate(post)
    mean_d = integrate(post * d) / z
    second_d = integrate(post * d**2) / z
    mean_r = integrate(post * rho) / z
    second_r = integrate(post * rho**2) / z
    return mean_d, second_d - mean_d**2, mean_r, second_r


def moments_from_state(alpha, beta, mu, sigma):
    return (
        mu,
        sigma**2,
        alpha / (alpha + beta),
        alpha * (alpha + 1) / ((alpha + beta) * (alpha + beta + 1)),
    )


def random_cases(rng, n):
    for _ in range(n):
        alpha = rng.uniform(0.5, 40.0)
        beta = rng.uniform(0.5, 40.0)
        mu = rng.uniform(PARAMS.d_min, PARAMS.d_max)
        sigma = rng.uniform(0.01, 0.3)
        d_k = rng.uniform(PARAMS.d_min, PARAMS.d_max)
        tau_sq = rng.uniform(0.005, 0.2) ** 2
        yield alpha, beta, mu, sigma, d_k, tau_sq


class TestInit:
    def test_beta_prior_from_mask(self):
        priors = PriorBundle(np.full((2, 2), 2.0), np.full((2, 2), 0.9))
        st = init_state(priors, FilterParams(beta_strength=10.0))
        assert np.allclose(st.alpha, 9.0)
        assert np.allclose(st.beta, 1.0)
        assert np.allclose(st.inlier_prob(), 0.9)

    def test_gaussian_prior_from_depth(self):
        priors = PriorBundle(np.full((1, 1), 2.0), np.full((1, 1), 0.5))
        st = init_state(priors, FilterParams(sigma0_pct=0.2))
        assert st.mu[0, 0] == pytest.approx(0.5)
        assert st.sigma[0, 0] == pytest.approx(0.1)

    def test_saturated_mask_clamped(self):
        priors = PriorBundle(np.ones((1, 1)), np.ones((1, 1)))
        st = init_state(priors, FilterParams(beta_strength=10.0))
        assert st.beta[0, 0] == pytest.approx(1e-3)
        assert st.inlier_prob()[0, 0] == pytest.approx(10.0 / 10.001)

    def test_missing_mask_defaults_to_ones(self):
        priors = PriorBundle(np.full((2, 3), 4.0), None)
        st = init_state(priors, FilterParams(beta_strength=10.0))
        assert np.allclose(st.alpha, 10.0)
        assert np.allclose(st.beta, 1e-3)


class TestMeasurementVariance:
    def test_formula(self):
        assert measurement_variance(0.4, 20.0, FilterParams(tau_lambda=1.0)) == (
            pytest.approx(4e-4)
        )

    def test_parallax_scaling(self):
        v1 = measurement_variance(0.4, 10.0, PARAMS)
        v2 = measurement_variance(0.4, 20.0, PARAMS)
        assert v1 == pytest.approx(4 * v2)

    def test_against_pinhole_disparity_oracle(self):
        # lateral translation: disparity = fx * baseline * inverse_depth, so
        # one pixel of matching error maps to 1/(fx*b) of inverse depth
        fx, baseline = 200.0, 0.1
        span_inv_depth = 0.4
        span_px = fx * baseline * span_inv_depth
        tau = math.sqrt(measurement_variance(span_inv_depth, span_px, PARAMS))
        analytic = 1.0 / (fx * baseline)
        assert 0.5 * analytic < tau < 2.0 * analytic

    def test_measurement_type_validation(self):
        with pytest.raises(ValueError):
            Measurement(0.5, 0.0)


class TestUpdateOracle:
    def test_matches_closed_mixture(self):
        rng = np.random.default_rng(42)
        for case in random_cases(rng, 1000):
            a, b, m, s, acc = update(*case, PARAMS)
            assert acc
            got = moments_from_state(a, b, m, s)
            want = mixture_moments(*case, PARAMS)
            # state clamps only act outside the sampled ranges
            for g, w in zip(got, want):
                assert abs(g - w) <= 1e-6 * max(abs(w), 1e-12)

    def test_closed_mixture_matches_integration(self):
        rng = np.random.default_rng(43)
        cases = [c for c in random_cases(rng, 200) if c[0] > 1.2 and c[1] > 1.2][:25]
        assert len(cases) == 25
        for case in cases:
            want = mixture_moments(*case, PARAMS)
            grid = integration_moments(*case, PARAMS)
            for g, w in zip(grid, want):
                assert abs(g - w) <= 1e-3 * max(abs(w), 1e-6)

    def test_confirming_measurement(self):
        a0, b0, mu0, s0 = 5.0, 5.0, 0.5, 0.05
        a, b, m, s, _ = update(a0, b0, mu0, s0, d_k=mu0, tau_sq=1e-6, params=PARAMS)
        assert m == pytest.approx(mu0, abs=1e-9)
        assert inlier_prob(a, b) > inlier_prob(a0, b0)

    def test_gross_outlier(self):
        a0, b0, mu0, s0 = 5.0, 5.0, 1.0, 0.02
        d_k = mu0 - 30 * s0  # far outside the Gaussian, inside the support
        a, b, m, s, _ = update(a0, b0, mu0, s0, d_k=d_k, tau_sq=1e-4, params=PARAMS)
        assert abs(m - mu0) < 0.01 * s0
        assert inlier_prob(a, b) < inlier_prob(a0, b0)

    def test_repeated_inliers_converge(self):
        a, b, m, s = 2.0, 2.0, 0.5, 0.1
        truth = 0.55
        sigmas = []
        rhos = []
        for _ in range(30):
            a, b, m, s, acc = update(a, b, m, s, d_k=truth, tau_sq=1e-4, params=PARAMS)
            assert acc
            sigmas.append(s)
            rhos.append(inlier_prob(a, b))
        assert all(x >= y - 1e-12 for x, y in zip(sigmas, sigmas[1:]))
        assert s < 0.011  # tau-limited floor
        assert abs(m - truth) < 1e-3
        # inlier belief climbs monotonically toward 1
        assert all(y > x for x, y in zip(rhos, rhos[1:]))
        assert rhos[0] > 0.5 and rhos[-1] > 0.9

    def test_rejected_when_support_missed(self):
        # outside [d_min, d_max] and hopeless under the Gaussian: no update
        a, b, m, s, acc = update(
            5.0, 5.0, 1.0, 0.001, d_k=25.0, tau_sq=1e-8, params=PARAMS
        )
        assert not acc
        assert (a, b, m, s) == (5.0, 5.0, 1.0, 0.001)

    def test_sigma_floor(self):
        a, b, m, s, acc = update(50.0, 0.01, 0.5, 1e-7, 0.5, 1e-14, PARAMS)
        assert acc
        assert s >= 1e-7


class TestUpdateMap:
    def test_matches_scalar(self):
        rng = np.random.default_rng(44)
        shape = (13, 17)
        st = FilterState(
            alpha=rng.uniform(0.5, 30, shape),
            beta=rng.uniform(0.5, 30, shape),
            mu=rng.uniform(PARAMS.d_min, PARAMS.d_max, shape),
            sigma=rng.uniform(0.01, 0.3, shape),
        )
        d_k = rng.uniform(PARAMS.d_min, PARAMS.d_max, shape)
        tau_sq = rng.uniform(0.005, 0.2, shape) ** 2
        measured = rng.uniform(size=shape) < 0.7
        out, accepted = update_map(st, d_k, tau_sq, measured, PARAMS)
        for v in range(shape[0]):
            for u in range(shape[1]):
                if measured[v, u]:
                    a, b, m, s, acc = update(
                        st.alpha[v, u], st.beta[v, u], st.mu[v, u], st.sigma[v, u],
                        d_k[v, u], tau_sq[v, u], PARAMS,
                    )
                    assert acc == accepted[v, u]
                    assert out.alpha[v, u] == pytest.approx(a, rel=1e-12)
                    assert out.beta[v, u] == pytest.approx(b, rel=1e-12)
                    assert out.mu[v, u] == pytest.approx(m, rel=1e-12)
                    assert out.sigma[v, u] == pytest.approx(s, rel=1e-12)
                else:
                    assert not accepted[v, u]
                    assert out.alpha[v, u] == st.alpha[v, u]
                    assert out.mu[v, u] == st.mu[v, u]

    def test_untouched_pixels_preserved_bitwise(self):
        rng = np.random.default_rng(45)
        st = FilterState(
            alpha=rng.uniform(1, 5, (4, 4)),
            beta=rng.uniform(1, 5, (4, 4)),
            mu=rng.uniform(0.1, 1.9, (4, 4)),
            sigma=rng.uniform(0.01, 0.2, (4, 4)),
        )
        out, _ = update_map(st, np.zeros((4, 4)), np.full((4, 4), 1e-4),
                            np.zeros((4, 4), dtype=bool), PARAMS)
        assert np.array_equal(out.alpha, st.alpha)
        assert np.array_equal(out.sigma, st.sigma)
