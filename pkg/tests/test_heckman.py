import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from selectivebayes.data import DesignMatrix, ObservedData
from selectivebayes.heckman import (
    EstimationError,
    GaussianPosterior,
    HeckmanParams,
    HeckmanPosterior,
    conditional_mean_tested,
    flat_prior_posterior,
    heckman_log_likelihood,
    inverse_mills,
    map_general_to_heckman,
    map_heckman_to_general,
    probit_fit,
    simulate_heckman,
)
from selectivebayes.model import ConfigurationError, ConstraintSet

from oracles import heckman_row_loglik_2d, truncated_normal_mean_upper


def design(n=400, d=3, seed=0):
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((n, d - 1))
    cols = (cols - cols.mean(0)) / cols.std(0)
    x = np.hstack([np.ones((n, 1)), cols])
    return DesignMatrix(x, ["intercept"] + [f"x{i}" for i in range(1, d)])


class TestParams:
    def test_correlation_bound_enforced(self):
        with pytest.raises(ConfigurationError):
            HeckmanParams(np.zeros(2), np.zeros(2), rho_tilde=1.1, sigma_tilde_sq=1.0)
        with pytest.raises(ConfigurationError):
            HeckmanParams(np.zeros(2), np.zeros(2), rho_tilde=0.5, sigma_tilde_sq=-1.0)

    def test_derived_quantities(self):
        p = HeckmanParams(np.zeros(2), np.zeros(2), rho_tilde=1.0, sigma_tilde_sq=4.0)
        assert p.sigma_tilde == 2.0
        assert p.correlation == 0.5


class TestParameterMap:
    @given(
        st.floats(min_value=0.05, max_value=8.0),
        st.floats(min_value=0.05, max_value=20.0),
        st.lists(st.floats(min_value=-3, max_value=3), min_size=2, max_size=4),
    )
    @settings(deadline=None, max_examples=200)
    def test_round_trip_identity(self, alpha, scale_sq, coefs):
        beta_y = np.asarray(coefs)
        beta_delta = beta_y[::-1] * 0.5
        p = map_general_to_heckman(alpha, scale_sq, beta_y, beta_delta)
        a2, s2, by2, bd2 = map_heckman_to_general(p)
        assert a2 == pytest.approx(alpha, rel=1e-12, abs=1e-12)
        assert s2 == pytest.approx(scale_sq, rel=1e-12)
        assert np.allclose(by2, beta_y, atol=1e-12)
        assert np.allclose(bd2, beta_delta, atol=1e-11)

    @given(
        st.floats(min_value=1e-3, max_value=50.0),
        st.floats(min_value=1e-3, max_value=50.0),
    )
    @settings(deadline=None, max_examples=200)
    def test_mapped_params_always_valid(self, alpha, scale_sq):
        p = map_general_to_heckman(alpha, scale_sq, np.zeros(2), np.zeros(2))
        assert p.rho_tilde**2 < p.sigma_tilde_sq

    def test_bad_inputs(self):
        with pytest.raises(ConfigurationError):
            map_general_to_heckman(-1.0, 1.0, np.zeros(2), np.zeros(2))
        with pytest.raises(ConfigurationError):
            map_general_to_heckman(1.0, 0.0, np.zeros(2), np.zeros(2))


class TestConditionalMean:
    def test_against_monte_carlo(self):
        # E[Y | T=1, x] from 2e6 bivariate-normal draws
        params = HeckmanParams(
            np.array([0.3, -0.8]), np.array([1.0, 0.5]), rho_tilde=0.9, sigma_tilde_sq=2.25
        )
        rng = np.random.default_rng(42)
        x_row = np.array([1.0, 0.7])
        n = 2_000_000
        u = rng.standard_normal(n)
        z = params.rho_tilde * u + np.sqrt(params.sigma_tilde_sq - params.rho_tilde**2) * rng.standard_normal(n)
        tested = (x_row @ params.beta_t_tilde + u) > 0
        mc = (x_row @ params.beta_y_tilde + z)[tested].mean()
        assert conditional_mean_tested(params, x_row) == pytest.approx(mc, abs=4e-3)

    def test_zero_correlation_is_unselected_mean(self):
        params = HeckmanParams(np.array([0.3]), np.array([1.2]), rho_tilde=0.0, sigma_tilde_sq=1.0)
        assert conditional_mean_tested(params, np.array([2.0])) == pytest.approx(2.4)

    def test_mills_matches_truncated_normal_oracle(self):
        # E[u | u > a] = mills(-a); oracle integrates the truncated density
        for a in (-3.0, -0.5, 0.0, 1.5, 4.0):
            assert float(inverse_mills(-a)) == pytest.approx(
                truncated_normal_mean_upper(a), abs=1e-9
            )


class TestProbit:
    def test_recovers_coefficients(self):
        x = design(n=20000, d=3, seed=1)
        beta = np.array([0.4, 1.0, -0.7])
        rng = np.random.default_rng(2)
        t = rng.random(x.n) < stats.norm.cdf(x.values @ beta)
        fit, converged = probit_fit(x, t)
        assert converged
        assert np.allclose(fit, beta, atol=0.05)

    def test_constant_t_raises(self):
        x = design(n=50)
        with pytest.raises(EstimationError):
            probit_fit(x, np.ones(50, dtype=bool))

    def test_separation_raises(self):
        x = design(n=200, d=2, seed=3)
        t = x.values[:, 1] > 0
        with pytest.raises(EstimationError):
            probit_fit(x, t)


class TestLogLikelihood:
    def test_matches_row_oracle(self):
        params = HeckmanParams(
            np.array([0.2, 0.6]), np.array([-0.3, 1.1]), rho_tilde=0.7, sigma_tilde_sq=1.8
        )
        x = design(n=60, d=2, seed=4)
        data = simulate_heckman(params, x, seed=5)
        expect = sum(
            heckman_row_loglik_2d(
                x.values[i],
                params.beta_t_tilde,
                params.beta_y_tilde,
                params.correlation,
                params.sigma_tilde_sq,
                bool(data.t[i]),
                data.y[i] if data.t[i] else None,
            )
            for i in range(x.n)
        )
        got = float(heckman_log_likelihood(params, data))
        assert got == pytest.approx(expect, rel=1e-9)

    def test_simulation_deterministic(self):
        params = HeckmanParams(np.array([0.2]), np.array([0.5]), 0.4, 1.0)
        x = design(n=100, d=1, seed=6)
        a = simulate_heckman(params, x, seed=9)
        b = simulate_heckman(params, x, seed=9)
        assert np.array_equal(a.t, b.t)
        assert np.array_equal(a.y, b.y, equal_nan=True)


class TestFlatPriorPosterior:
    def params(self):
        return HeckmanParams(
            np.array([0.3, 0.7, -0.4]), np.array([0.5, 1.0, -0.8]), 0.8, 1.5
        )

    def test_mean_recovers_truth(self):
        params = self.params()
        x = design(n=40000, d=3, seed=7)
        data = simulate_heckman(params, x, seed=8)
        post = flat_prior_posterior(data, params.beta_t_tilde)
        # coefficients are [beta_y..., mills coefficient = rho_tilde]
        truth = np.append(params.beta_y_tilde, params.rho_tilde)
        assert np.allclose(post.mean, truth, atol=0.08)

    def test_conditioning_never_inflates_variance(self):
        # law of total variance: conditioning cannot increase any variance
        rng = np.random.default_rng(10)
        for trial in range(100):
            dim = int(rng.integers(2, 6))
            a = rng.standard_normal((dim + 2, dim))
            cov = a.T @ a + 1e-6 * np.eye(dim)
            gp = GaussianPosterior(rng.standard_normal(dim), cov, [f"c{j}" for j in range(dim)])
            k = int(rng.integers(0, dim))
            cond = gp.conditional_on(k, 0.0)
            kept = [j for j in range(dim) if j != k]
            for new_i, old_i in enumerate(kept):
                assert cond.variance(new_i) <= gp.variance(old_i) + 1e-12

    def test_strict_decrease_on_correlated_designs(self):
        rng = np.random.default_rng(12)
        for trial in range(20):
            dim = 3
            base = rng.standard_normal((200, dim))
            base[:, 1] = base[:, 0] + 0.3 * base[:, 1]  # force correlation
            cov = np.cov(base, rowvar=False)
            gp = GaussianPosterior(np.zeros(dim), cov, ["a", "b", "c"])
            cond = gp.conditional_on(0, 0.0)
            assert cond.variance(0) < gp.variance(1) - 1e-10

    def test_constrained_dim_drops_column(self):
        params = self.params()
        x = design(n=500, d=3, seed=13)
        data = simulate_heckman(params, x, seed=14)
        post = flat_prior_posterior(data, params.beta_t_tilde, constrained_dim=(1, 1.0))
        assert len(post.names) == 3
        assert "beta_y[x1]" not in post.names

    def test_rank_deficiency_reported(self):
        params = self.params()
        x = design(n=500, d=3, seed=15)
        v = x.values.copy()
        v[:, 2] = v[:, 1]  # duplicate column
        data = simulate_heckman(params, DesignMatrix(v, x.column_names), seed=16)
        with pytest.raises(EstimationError, match="rank-deficient"):
            flat_prior_posterior(data, params.beta_t_tilde)


class TestHeckmanPosterior:
    def test_unpack_round_trip(self):
        x = design(n=120, d=2, seed=17)
        params = HeckmanParams(np.array([0.2, 0.5]), np.array([0.4, -0.6]), 0.5, 1.2)
        data = simulate_heckman(params, x, seed=18)
        post = HeckmanPosterior(data)
        assert post.dim == 2 + 2 + 2
        vec = np.concatenate([[0.4, -0.6], [0.2, 0.5], [np.log(1.2)], [np.arctanh(0.5 / np.sqrt(1.2))]])
        up = post.unpack(vec)
        assert np.allclose(up.beta_y_tilde, [0.4, -0.6])
        assert up.sigma_tilde_sq == pytest.approx(1.2)
        assert up.rho_tilde == pytest.approx(0.5)
        # log posterior at the truth equals the likelihood
        assert float(post(vec)) == pytest.approx(
            float(heckman_log_likelihood(up, data)), rel=1e-12
        )

    def test_support_bound(self):
        x = design(n=60, d=2, seed=19)
        params = HeckmanParams(np.array([0.0, 0.0]), np.array([0.0, 0.0]), 0.3, 1.0)
        data = simulate_heckman(params, x, seed=20)
        post = HeckmanPosterior(data)
        vec = np.zeros(post.dim)
        vec[-2] = 13.0  # log sigma^2 out of bounds
        assert post(vec) == -np.inf

    def test_expertise_mask_reduces_dim(self):
        x = design(n=120, d=3, seed=21)
        params = HeckmanParams(np.array([0.2, 0.5, -0.1]), np.array([0.4, -0.6, 0.3]), 0.5, 1.2)
        data = simulate_heckman(params, x, seed=22)
        mask = np.array([False, True, False])
        post = HeckmanPosterior(data, ConstraintSet(expertise_mask=mask))
        assert post.dim == 2 + 3 + 2
        assert "beta_y[x1]" not in post.names
        # pinned coordinate reconstructed as beta_t * sigma^2 / rho
        vec = np.concatenate([[0.4, 0.3], [0.2, 0.5, -0.1], [np.log(1.2)], [np.arctanh(0.5 / np.sqrt(1.2))]])
        up = post.unpack(vec)
        assert up.beta_y_tilde[1] == pytest.approx(0.5 * 1.2 / 0.5)
