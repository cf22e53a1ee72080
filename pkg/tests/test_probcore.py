import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import kstest

from resilscreen.probcore import (
    ConfigurationError,
    Marginal,
    NBallSpec,
    RandomModel,
    beta_from_prob,
    sample_lhs,
    sample_nball,
    sample_ring,
    std_normal_cdf,
    std_normal_inv_cdf,
)


class TestStdNormal:
    def test_median(self):
        assert std_normal_inv_cdf(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_tail_values(self):
        assert std_normal_inv_cdf(1e-4) == pytest.approx(-3.719, abs=1e-3)
        assert std_normal_inv_cdf(1e-5) == pytest.approx(-4.265, abs=1e-3)

    def test_domain_error(self):
        for bad in (0.0, 1.0, -0.2, 1.3, float("nan")):
            with pytest.raises(ValueError):
                std_normal_inv_cdf(bad)

    def test_round_trip(self):
        p = np.concatenate([np.geomspace(1e-12, 0.5, 40), 1 - np.geomspace(1e-12, 0.5, 40)])
        back = std_normal_cdf(std_normal_inv_cdf(p))
        assert np.max(np.abs(back - p)) < 1e-10

    @given(st.floats(min_value=1e-12, max_value=1 - 1e-12))
    @settings(max_examples=200, deadline=None)
    def test_monotone(self, p):
        q = min(p * 1.001, 1 - 1e-13)
        if q > p:
            assert std_normal_inv_cdf(q) > std_normal_inv_cdf(p)


class TestBetaFromProb:
    def test_half(self):
        assert beta_from_prob(0.5) == pytest.approx(0.0, abs=1e-12)

    def test_reference_tail(self):
        assert beta_from_prob(1e-4) == pytest.approx(3.72, abs=0.005)

    def test_product_composition(self):
        p = std_normal_cdf(-3.17) * std_normal_cdf(0.01)
        assert beta_from_prob(p) == pytest.approx(3.36, abs=0.01)

    def test_degenerate(self):
        with pytest.raises(ValueError):
            beta_from_prob(0.0)
        assert beta_from_prob(0.0, allow_degenerate=True) == math.inf
        assert beta_from_prob(1.0, allow_degenerate=True) == -math.inf

    def test_strictly_decreasing(self):
        ps = np.geomspace(1e-9, 1 - 1e-9, 50)
        betas = [beta_from_prob(float(p)) for p in ps]
        assert all(b1 > b2 for b1, b2 in zip(betas, betas[1:]))


class TestMarginal:
    def test_lognormal_moment_identity(self):
        m = Marginal("lognormal", 160.0, 0.1)
        assert math.exp(m.mu_ln + 0.5 * m.sigma_ln**2) == pytest.approx(160.0, rel=1e-12)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            Marginal("lognormal", -3.0, 0.1)
        with pytest.raises(ConfigurationError):
            Marginal("normal", 1.0, 0.0)
        with pytest.raises(ConfigurationError):
            Marginal("weibull", 1.0, 0.1)


class TestNataf:
    def test_mean_at_origin(self):
        rm = RandomModel.independent([Marginal("normal", 400.0, 0.3)] * 3)
        x = rm.to_physical(np.zeros(3))
        assert np.allclose(x, 400.0)

    def test_lognormal_one_sigma(self):
        m = Marginal("lognormal", 160.0, 0.1)
        rm = RandomModel.independent([m, m])
        x = rm.to_physical(np.array([1.0, 0.0]))
        assert x[0] == pytest.approx(math.exp(m.mu_ln + m.sigma_ln), rel=1e-12)

    def test_round_trip(self, rng):
        marginals = [
            Marginal("normal", 276.0, 0.05),
            Marginal("lognormal", 160.0, 0.1),
            Marginal("lognormal", 5.0, 0.5),
        ]
        corr = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.6], [0.0, 0.6, 1.0]])
        rm = RandomModel(marginals, corr)
        U = rng.standard_normal((500, 3))
        back = rm.to_standard(rm.to_physical(U))
        assert np.max(np.abs(back - U)) < 1e-9

    def test_lognormal_pair_correlation_oracle(self):
        # product-moment correlation of transformed pairs must reproduce the
        # physical rho; the closed-form warp is checked against sampling
        m = Marginal("lognormal", 160.0, 0.1)
        rho = 0.6
        rm = RandomModel([m, m], np.array([[1.0, rho], [rho, 1.0]]))
        expected_warp = math.log1p(rho * 0.1 * 0.1) / (m.sigma_ln**2)
        assert rm.warped_correlation[0, 1] == pytest.approx(expected_warp, rel=1e-12)
        U = np.random.default_rng(7).standard_normal((1_000_000, 2))
        X = rm.to_physical(U)
        sample_rho = np.corrcoef(X[:, 0], X[:, 1])[0, 1]
        assert sample_rho == pytest.approx(rho, abs=0.02)

    def test_mixed_pair_correlation_oracle(self):
        mn = Marginal("normal", 276.0, 0.05)
        ml = Marginal("lognormal", 160.0, 0.1)
        rho = 0.5
        rm = RandomModel([mn, ml], np.array([[1.0, rho], [rho, 1.0]]))
        U = np.random.default_rng(8).standard_normal((1_000_000, 2))
        X = rm.to_physical(U)
        assert np.corrcoef(X[:, 0], X[:, 1])[0, 1] == pytest.approx(rho, abs=0.02)

    def test_invalid_correlation_rejected(self):
        m = Marginal("normal", 1.0, 0.1)
        with pytest.raises(ConfigurationError):
            RandomModel([m, m], np.array([[1.0, 1.2], [1.2, 1.0]]))
        with pytest.raises(ConfigurationError):
            RandomModel([m, m], np.array([[1.0, 0.2], [0.3, 1.0]]))

    def test_non_positive_definite_rejected(self):
        m = Marginal("normal", 1.0, 0.1)
        corr = np.array([[1.0, 0.9, -0.9], [0.9, 1.0, 0.9], [-0.9, 0.9, 1.0]])
        with pytest.raises(ConfigurationError):
            RandomModel([m, m, m], corr)


class TestLhs:
    def test_quartile_stratification(self):
        pts = sample_lhs(1, 4, seed=3)
        quartiles = np.sort(std_normal_cdf(pts[:, 0]))
        for i, q in enumerate(quartiles):
            assert i / 4 < q < (i + 1) / 4

    def test_mean_near_zero(self):
        pts = sample_lhs(5, 10_000, seed=11)
        assert np.all(np.abs(pts.mean(axis=0)) < 0.05)

    def test_deterministic(self):
        a = sample_lhs(3, 100, seed=42)
        b = sample_lhs(3, 100, seed=42)
        assert np.array_equal(a, b)


class TestNBall:
    def test_max_norm(self):
        spec = NBallSpec(5, 3.719, 10_000)
        pts = sample_nball(spec, seed=0)
        assert np.linalg.norm(pts, axis=1).max() <= 3.719 + 1e-12

    def test_half_radius_fraction(self):
        spec = NBallSpec(5, 3.719, 20_000)
        pts = sample_nball(spec, seed=1)
        frac = (np.linalg.norm(pts, axis=1) <= spec.radius / 2).mean()
        expected = 0.5**5
        sd = math.sqrt(expected * (1 - expected) / spec.count)
        assert abs(frac - expected) <= 3 * sd

    def test_radius_law_ks(self):
        spec = NBallSpec(2, 1.0, 100_000)
        pts = sample_nball(spec, seed=2)
        r = np.linalg.norm(pts, axis=1)
        stat, _ = kstest(r, lambda x: x**2)
        assert stat < 1.63 / math.sqrt(spec.count)  # 1% critical value

    def test_prefix_stability(self):
        big = sample_nball(NBallSpec(4, 2.0, 500), seed=9)
        small = sample_nball(NBallSpec(4, 2.0, 200), seed=9)
        assert np.array_equal(big[:200], small)

    def test_ring_bounds(self, rng):
        pts = sample_ring(3, 1.0, 2.0, 5000, rng)
        r = np.linalg.norm(pts, axis=1)
        assert r.min() >= 1.0 - 1e-12 and r.max() <= 2.0 + 1e-12
