import numpy as np
import pytest

from selectivebayes import fmath as fm
from selectivebayes.data import DesignMatrix, ObservedData
from selectivebayes.model import (
    ConfigurationError,
    LikelihoodError,
    Theta,
    log_joint_normal,
    log_likelihood_uniform,
    row_probs_uniform,
    row_probs_uniform_alpha2,
    uniform_event_probs,
)

from oracles import naive_log_joint_normal, quad_event_probs_alpha1, quad_event_probs_alpha2


def small_data(n=12, d=3, seed=0, scale=2.0, beta_y=None, beta_delta=None):
    rng = np.random.default_rng(seed)
    cols = rng.standard_normal((n, d - 1))
    cols = (cols - cols.mean(0)) / cols.std(0)
    x = np.hstack([np.ones((n, 1)), cols])
    dm = DesignMatrix(x, ["intercept"] + [f"x{i}" for i in range(1, d)])
    beta_y = np.zeros(d) if beta_y is None else beta_y
    beta_delta = np.zeros(d) if beta_delta is None else beta_delta
    z = rng.uniform(0, scale, n)
    r = x @ beta_y + z
    y = rng.random(n) < 1 / (1 + np.exp(-r))
    t = rng.random(n) < 1 / (1 + np.exp(-(r + x @ beta_delta)))
    yy = np.where(t, y.astype(float), np.nan)
    return ObservedData(dm, t, yy)


class TestRowProbsUniform:
    def test_degenerate_scale_recovers_sigmoid(self):
        rl = row_probs_uniform(0.0, 0.0, 1e-8)
        assert rl.p_y1 == pytest.approx(0.5, abs=1e-6)
        assert rl.p_t0 == pytest.approx(0.5, abs=1e-6)

    def test_matches_quadrature(self):
        rl = row_probs_uniform(-1.0, 0.3, 2.0)
        p11, p01, pt0, py1 = quad_event_probs_alpha1(-1.0, 0.3, 2.0)
        assert rl.p_y1_t1 == pytest.approx(p11, abs=1e-8)
        assert rl.p_y0_t1 == pytest.approx(p01, abs=1e-8)
        assert rl.p_t0 == pytest.approx(pt0, abs=1e-8)
        assert rl.p_y1 == pytest.approx(py1, abs=1e-8)

    def test_series_branch_matches_quadrature(self):
        rl = row_probs_uniform(0.5, 0.5 + 1e-9, 1.5)
        p11, p01, pt0, py1 = quad_event_probs_alpha1(0.5, 0.5 + 1e-9, 1.5)
        assert rl.p_y1_t1 == pytest.approx(p11, abs=1e-7)
        assert rl.p_y0_t1 == pytest.approx(p01, abs=1e-7)
        assert rl.p_t0 == pytest.approx(pt0, abs=1e-7)

    def test_randomized_against_quadrature(self):
        rng = np.random.default_rng(42)
        for _ in range(120):
            x_y = rng.uniform(-30, 30)
            x_t = rng.uniform(-30, 30)
            if rng.random() < 0.3:
                x_t = x_y + rng.uniform(-1e-6, 1e-6)
            s = rng.uniform(0.05, 8.0)
            rl = row_probs_uniform(x_y, x_t, s)
            p11, p01, pt0, py1 = quad_event_probs_alpha1(x_y, x_t, s)
            assert rl.p_y1_t1 == pytest.approx(p11, abs=1e-8)
            assert rl.p_y0_t1 == pytest.approx(p01, abs=1e-8)
            assert rl.p_t0 == pytest.approx(pt0, abs=1e-8)
            assert rl.p_y1 == pytest.approx(py1, abs=1e-8)

    def test_bad_scale_raises(self):
        with pytest.raises(ConfigurationError):
            row_probs_uniform(0.0, 0.0, -1.0)

    def test_nonfinite_raises(self):
        with pytest.raises(LikelihoodError):
            row_probs_uniform(np.inf, 0.0, 1.0)


class TestRowProbsAlpha2:
    def test_degenerate_scale(self):
        rl = row_probs_uniform_alpha2(0.0, 0.0, 1e-8)
        assert rl.p_t0 == pytest.approx(0.5, abs=1e-6)

    @pytest.mark.parametrize("x_y,x_delta,scale", [(-0.4, 0.7, 2.0), (1.0, -1.0, 0.5)])
    def test_matches_quadrature(self, x_y, x_delta, scale):
        rl = row_probs_uniform_alpha2(x_y, x_delta, scale)
        p11, p01, pt0, py1 = quad_event_probs_alpha2(x_y, x_delta, scale)
        assert rl.p_y1_t1 == pytest.approx(p11, abs=1e-7)
        assert rl.p_y0_t1 == pytest.approx(p01, abs=1e-7)
        assert rl.p_t0 == pytest.approx(pt0, abs=1e-7)
        assert rl.p_y1 == pytest.approx(py1, abs=1e-7)


class TestLogLikelihoodUniform:
    def test_single_untested_row_degenerate(self):
        # one untested row at x_t = 0 and scale -> 0+ contributes log(1/2);
        # pad with extra rows to satisfy the n >= d + 2 data invariant,
        # then subtract their contribution
        data = small_data(n=8, d=2, seed=1, scale=1e-8)
        theta = Theta(1.0, 1e-8, np.zeros(2), np.zeros(2))
        ll = log_likelihood_uniform(theta, data)
        # every event probability is a sigmoid of a standardized index and
        # each marginal is within 1e-6 of sigmoid at scale 1e-8
        x = data.x.values
        expected = 0.0
        sig = lambda v: 1 / (1 + np.exp(-v))
        for i in range(data.n):
            p_t1 = sig(x[i] @ theta.beta_t)
            if data.t[i]:
                p_y = sig(x[i] @ theta.beta_y)
                expected += np.log(p_t1 * (p_y if data.y[i] > 0.5 else 1 - p_y))
            else:
                expected += np.log(1 - p_t1)
        assert ll == pytest.approx(expected, abs=1e-5)

    def test_sums_per_row_quadrature(self):
        rng = np.random.default_rng(7)
        beta_y = rng.normal(size=3)
        beta_delta = rng.normal(size=3)
        data = small_data(n=100, d=3, seed=3, scale=1.7, beta_y=beta_y, beta_delta=beta_delta)
        theta = Theta(1.0, 1.7, beta_y, beta_delta)
        expected = 0.0
        x = data.x.values
        for i in range(data.n):
            p11, p01, pt0, _ = quad_event_probs_alpha1(
                float(x[i] @ beta_y), float(x[i] @ theta.beta_t), 1.7
            )
            if data.t[i]:
                expected += np.log(p11 if data.y[i] > 0.5 else p01)
            else:
                expected += np.log(pt0)
        assert log_likelihood_uniform(theta, data) == pytest.approx(expected, abs=1e-6)

    def test_simplex_identity_per_row(self):
        rng = np.random.default_rng(5)
        x_y = rng.uniform(-4, 4, 50)
        x_t = rng.uniform(-4, 4, 50)
        p11, p01, pt0, _ = uniform_event_probs(x_y, x_t, 2.3)
        np.testing.assert_allclose(p11 + p01 + pt0, 1.0, atol=1e-10)

    def test_general_alpha_path(self):
        beta_y = np.array([0.2, -0.5, 0.9])
        beta_delta = np.array([0.1, 0.4, -0.3])
        data = small_data(n=40, d=3, seed=9, scale=1.2, beta_y=beta_y, beta_delta=beta_delta)
        theta = Theta(2.0, 1.2, beta_y, beta_delta)
        x = data.x.values
        expected = 0.0
        for i in range(data.n):
            p11, p01, pt0, _ = quad_event_probs_alpha2(
                float(x[i] @ beta_y), float(x[i] @ beta_delta), 1.2
            )
            if data.t[i]:
                expected += np.log(p11 if data.y[i] > 0.5 else p01)
            else:
                expected += np.log(pt0)
        assert log_likelihood_uniform(theta, data) == pytest.approx(expected, abs=1e-6)


class TestLogJointNormal:
    def test_trivial_row_value(self):
        # z = 0, beta = 0, tested positive row: two Bernoulli(1/2) terms
        # plus a standard normal logpdf at 0 per row
        data = small_data(n=8, d=2, seed=11, scale=1.0)
        theta = Theta(1.0, 1.0, np.zeros(2), np.zeros(2))
        z = np.zeros(data.n)
        got = log_joint_normal(theta, z, data)
        n_terms = data.n + data.n_tested  # T terms + Y terms
        expected = n_terms * np.log(0.5) + data.n * (-0.5 * np.log(2 * np.pi))
        assert got == pytest.approx(expected, abs=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(13)
        beta_y = rng.normal(size=3)
        beta_delta = rng.normal(size=3)
        data = small_data(n=5, d=3, seed=17, scale=1.5, beta_y=beta_y, beta_delta=beta_delta)
        theta = Theta(1.3, 1.5, beta_y, beta_delta)
        z = rng.normal(size=5)
        got = log_joint_normal(theta, z, data)
        want = naive_log_joint_normal(
            1.3, 1.5, beta_y, beta_delta, z, data.x.values, data.t, np.nan_to_num(data.y)
        )
        assert got == pytest.approx(want, abs=1e-12)

    def test_sign_flip_moves_only_bernoulli_terms(self):
        data = small_data(n=10, d=2, seed=19)
        theta = Theta(1.0, 2.0, np.zeros(2), np.zeros(2))
        rng = np.random.default_rng(3)
        z = rng.normal(size=10)

        def bernoulli_terms(zz):
            sig = lambda v: 1 / (1 + np.exp(-v))
            out = 0.0
            for i in range(data.n):
                p_t = sig(zz[i])  # beta = 0, alpha = 1
                out += np.log(p_t) if data.t[i] else np.log(1 - p_t)
                if data.t[i]:
                    p_y = sig(zz[i])
                    out += np.log(p_y) if data.y[i] > 0.5 else np.log(1 - p_y)
            return out

        a = log_joint_normal(theta, z, data) - bernoulli_terms(z)
        b = log_joint_normal(theta, -z, data) - bernoulli_terms(-z)
        assert a == pytest.approx(b, abs=1e-10)
