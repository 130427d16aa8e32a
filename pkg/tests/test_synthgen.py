"""Generator checks: closed-form marginal agreement, determinism, the
policy surrogate's trend inversion, and ground-truth recovery for the
selection family."""

import numpy as np
import pytest
from scipy.special import expit

from selectivebayes import synthgen as sg
from selectivebayes.heckman import flat_prior_posterior, probit_fit
from selectivebayes.model import (
    ConfigurationError,
    uniform_event_probs,
    uniform_event_probs_general,
)


def binned_means(f, values, mask, k=5):
    edges = np.quantile(f, np.linspace(0, 1, k + 1))
    idx = np.clip(np.searchsorted(edges, f, side="right") - 1, 0, k - 1)
    return np.array([values[(idx == j) & mask].mean() for j in range(k)]), idx


class TestGenerate:
    def test_uniform_testing_rate_matches_closed_form(self):
        data, theta = sg.generate(sg.paper_uniform_config(3))
        p_t0 = uniform_event_probs(
            data.x.values @ theta.beta_y, data.x.values @ theta.beta_t, theta.scale
        )[2]
        p_t1 = 1.0 - p_t0
        se = np.sqrt((p_t1 * (1 - p_t1)).sum()) / data.n
        assert abs(data.t.mean() - p_t1.mean()) < 3 * se

    def test_uniform_tested_positive_rate_matches_closed_form(self):
        data, theta = sg.generate(sg.paper_uniform_config(12, n=20000))
        p11, _, p_t0, _ = uniform_event_probs(
            data.x.values @ theta.beta_y, data.x.values @ theta.beta_t, theta.scale
        )
        expected = p11.sum() / (1 - p_t0).sum()
        observed = data.y_tested().mean()
        se = np.sqrt(expected * (1 - expected) / data.n_tested)
        assert abs(observed - expected) < 3 * se

    def test_degenerate_scale_gives_deterministic_sigmoid_outcome(self):
        config = sg.GenConfig(
            family="uniform", n=40000, d=3, seed=5, scale_spec=1e-8,
            beta_y_intercept_spec=0.0, beta_delta_intercept_spec=0.0,
        )
        data, theta = sg.generate(config)
        x_y = data.x.values @ theta.beta_y
        edges = np.quantile(x_y, np.linspace(0, 1, 11))
        idx = np.clip(np.searchsorted(edges, x_y, side="right") - 1, 0, 9)
        for j in range(10):
            sel = (idx == j) & data.t
            if sel.sum() < 50:
                continue
            p = expit(x_y[sel]).mean()
            se = np.sqrt(p * (1 - p) / sel.sum())
            assert abs(data.y[sel].mean() - p) < 3 * se + 1e-12

    def test_interactions_add_product_columns(self):
        data, theta = sg.generate(sg.paper_interaction_config(5))
        assert data.x.d == 5 + 6
        assert theta.beta_y.size == 11
        # 60% of the 10 non-intercept columns
        assert int((theta.beta_delta == 0).sum()) == 6

    def test_seed_determinism(self):
        a, ta = sg.generate(sg.paper_uniform_config(7))
        b, tb = sg.generate(sg.paper_uniform_config(7))
        assert np.array_equal(a.y, b.y, equal_nan=True)
        assert np.array_equal(a.t, b.t)
        assert np.array_equal(ta.beta_delta, tb.beta_delta)
        c, _ = sg.generate(sg.paper_uniform_config(8))
        assert not np.array_equal(a.t, c.t)

    def test_normal_family_runs_and_masks_expertise(self):
        data, theta = sg.generate(sg.paper_normal_fixed_alpha_config(2))
        assert data.n == 200
        assert np.all(theta.beta_delta[[2, 3, 4]] == 0)
        assert theta.fixed_flag == "alpha_fixed"

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            sg.GenConfig(family="weibull", n=100, d=3, seed=0)
        with pytest.raises(ConfigurationError):
            sg.GenConfig(family="uniform", n=100, d=1, seed=0)
        with pytest.raises(ConfigurationError):
            sg.GenConfig(family="uniform", n=100, d=3, seed=0, expertise_dims=(0,))
        with pytest.raises(ConfigurationError):
            sg.GenConfig(
                family="uniform", n=100, d=3, seed=0,
                expertise_dims=(1,), expertise_fraction=0.5,
            )


class TestHeckmanRecovery:
    def test_two_stage_fit_recovers_beta_y(self):
        # correct-family fit on its own data: posterior mean within
        # 3 posterior sd on >= 90% of coordinates across 20 seeds
        hits = total = 0
        for seed in range(20):
            data, params = sg.generate(sg.paper_heckman_config(seed, n=50000))
            beta_t_hat, converged = probit_fit(data.x, data.t)
            assert converged
            post = flat_prior_posterior(data, beta_t_hat)
            d = params.beta_y_tilde.size
            for j in range(d):
                sd = np.sqrt(post.variance(j))
                hits += abs(post.mean[j] - params.beta_y_tilde[j]) < 3 * sd
                total += 1
        assert hits / total >= 0.90


class TestPolicySurrogate:
    def test_trend_inversion_on_large_sample(self):
        data, theta, desc = sg.generate_policy_surrogate(1_000_000, 17)
        f = data.x.values[:, 1]
        x_y = data.x.values @ theta.beta_y
        x_d = data.x.values @ theta.beta_delta
        p_y1 = uniform_event_probs_general(x_y, x_d, theta.alpha, theta.scale)[3]
        true_trend, _ = binned_means(f, p_y1, np.ones(data.n, dtype=bool))
        obs_trend, _ = binned_means(f, data.y, data.t)
        assert np.all(np.diff(true_trend) > 0)
        assert np.any(np.diff(obs_trend) < 0)
        assert desc["artifact_designed"]

    def test_no_policy_variant_trends_agree(self):
        data, theta, _ = sg.generate_policy_surrogate(200000, 9, policy=False)
        f = data.x.values[:, 1]
        # degenerate unobservable: true risk is sigmoid(x beta_y)
        p = expit(data.x.values @ theta.beta_y)
        edges = np.quantile(f, np.linspace(0, 1, 6))
        idx = np.clip(np.searchsorted(edges, f, side="right") - 1, 0, 4)
        for j in range(5):
            sel = (idx == j) & data.t
            expected = p[sel].mean()
            se = np.sqrt(expected * (1 - expected) / sel.sum())
            assert abs(data.y[sel].mean() - expected) < 3 * se

    def test_prevalence_matches_target(self):
        data, theta, desc = sg.generate_policy_surrogate(500000, 11)
        x_y = data.x.values @ theta.beta_y
        x_d = data.x.values @ theta.beta_delta
        p_y1 = uniform_event_probs_general(x_y, x_d, theta.alpha, theta.scale)[3]
        # intercept solved so the closed-form mean hits the target exactly
        assert abs(p_y1.mean() - 0.02) < 1e-9
        # realized prevalence over all rows agrees within binomial error
        se = np.sqrt(0.02 * 0.98 / data.n)
        assert abs(desc["population_prevalence"] - 0.02) < 3 * se

    def test_surrogate_needs_min_rows(self):
        with pytest.raises(ConfigurationError):
            sg.generate_policy_surrogate(100, 0)

    def test_surrogate_deterministic(self):
        a, ta, _ = sg.generate_policy_surrogate(5000, 3)
        b, tb, _ = sg.generate_policy_surrogate(5000, 3)
        assert np.array_equal(a.y, b.y, equal_nan=True)
        assert np.array_equal(ta.beta_y, tb.beta_y)
