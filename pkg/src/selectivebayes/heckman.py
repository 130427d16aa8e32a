"""Heckman sample-selection special case: generative model, parameter
mapping to/from the general model, inverse-Mills analytics, probit first
stage, flat-prior Gaussian posterior, full selection likelihood, and the
empirical variance-decomposition check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import fmath as fm
from .data import DesignMatrix, ObservedData
from .model import ConfigurationError, ConstraintSet

__all__ = [
    "HeckmanParams",
    "ContinuousPrevalence",
    "map_general_to_heckman",
    "map_heckman_to_general",
    "inverse_mills",
    "conditional_mean_tested",
    "probit_fit",
    "flat_prior_posterior",
    "heckman_log_likelihood",
    "simulate_heckman",
    "variance_decomposition_check",
    "HeckmanPosterior",
]


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ContinuousPrevalence:
    """Prevalence constraint for continuous outcomes (the selection model's
    Y is real-valued, so the target is not restricted to (0, 1))."""

    target: float
    weight: float = 1e4
    mode: str = "soft"


@dataclass(frozen=True)
class HeckmanParams:
    """Selection-model parameters; rho_tilde is the covariance of the
    selection and outcome noise, so rho^2 < sigma^2 is the strict
    correlation bound."""

    beta_t_tilde: np.ndarray
    beta_y_tilde: np.ndarray
    rho_tilde: float
    sigma_tilde_sq: float

    def __post_init__(self):
        object.__setattr__(self, "beta_t_tilde", np.asarray(self.beta_t_tilde, dtype=float))
        object.__setattr__(self, "beta_y_tilde", np.asarray(self.beta_y_tilde, dtype=float))
        if not (self.sigma_tilde_sq > 0):
            raise ConfigurationError("sigma_tilde_sq must be positive")
        if not (self.rho_tilde**2 < self.sigma_tilde_sq):
            raise ConfigurationError("need rho_tilde^2 < sigma_tilde_sq")

    @property
    def sigma_tilde(self) -> float:
        return float(np.sqrt(self.sigma_tilde_sq))

    @property
    def correlation(self) -> float:
        return self.rho_tilde / self.sigma_tilde


def map_general_to_heckman(alpha: float, scale_sq: float, beta_y, beta_delta) -> HeckmanParams:
    """Parameter map from the general (alpha, sigma^2, beta_y, beta_delta)
    form to the selection-model form."""
    if not (alpha > 0 and scale_sq > 0):
        raise ConfigurationError("alpha and scale_sq must be positive")
    beta_y = np.asarray(beta_y, dtype=float)
    beta_t = alpha * beta_y + np.asarray(beta_delta, dtype=float)
    denom = np.sqrt(alpha**2 * scale_sq + 1.0)
    return HeckmanParams(
        beta_t_tilde=beta_t / denom,
        beta_y_tilde=beta_y,
        rho_tilde=alpha * scale_sq / denom,
        sigma_tilde_sq=scale_sq,
    )


def map_heckman_to_general(params: HeckmanParams):
    """Inverse map; unique because alpha > 0.

    Returns (alpha, scale_sq, beta_y, beta_delta).
    """
    sigma_sq = params.sigma_tilde_sq
    rho = params.rho_tilde
    # rho = alpha sigma^2 / sqrt(alpha^2 sigma^2 + 1)  =>  solve for alpha
    # rho^2 (alpha^2 sigma^2 + 1) = alpha^2 sigma^4
    alpha_sq = rho**2 / (sigma_sq**2 - rho**2 * sigma_sq)
    alpha = float(np.sqrt(alpha_sq))
    denom = np.sqrt(alpha**2 * sigma_sq + 1.0)
    beta_t = params.beta_t_tilde * denom
    beta_y = params.beta_y_tilde
    return alpha, sigma_sq, beta_y, beta_t - alpha * beta_y


def inverse_mills(x):
    """phi(x)/Phi(x); delegates to the log-space form, accurate on the
    whole real line including the deep left tail."""
    return fm.inverse_mills(x)


def mills_design(x_tested: np.ndarray, beta_t_tilde: np.ndarray) -> np.ndarray:
    """M = [X_{T=1}; inverse Mills of X beta_t] used by the flat-prior
    posterior and the conditional mean."""
    m = fm.inverse_mills(x_tested @ beta_t_tilde)
    return np.column_stack([x_tested, m])


def conditional_mean_tested(params: HeckmanParams, x_row: np.ndarray) -> float:
    """E[Y | T=1, X=x]: x beta_y plus the Mills-column coefficient times the
    inverse Mills ratio at x beta_t.

    The coefficient is the covariance of the selection and outcome noise
    (equivalently correlation times outcome sd, since the selection noise
    has unit variance); this is the convention the Monte Carlo oracle
    confirms.
    """
    x_row = np.asarray(x_row, dtype=float)
    mills = float(fm.inverse_mills(float(x_row @ params.beta_t_tilde)))
    return float(x_row @ params.beta_y_tilde) + params.rho_tilde * mills


def probit_fit(x: DesignMatrix, t: np.ndarray, tol: float = 1e-8, max_iter: int = 100):
    """Maximum-likelihood probit coefficients by Newton iterations.

    Returns (coefficients, converged).  Raises on quasi-separation.
    """
    t = np.asarray(t, dtype=bool)
    if t.all() or not t.any():
        raise EstimationError("t is constant")
    xv = x.values
    beta = np.zeros(xv.shape[1])
    sign = np.where(t, 1.0, -1.0)
    converged = False
    for _ in range(max_iter):
        eta = xv @ beta
        # gradient: sum_i sign_i * mills(sign_i * eta_i) * x_i
        lam = np.array(fm.inverse_mills(sign * eta))
        grad = xv.T @ (sign * lam)
        w = lam * (lam + sign * eta)  # negative Hessian weights, positive
        hess = xv.T @ (xv * w[:, None])
        step = np.linalg.solve(hess, grad)
        beta = beta + step
        if np.linalg.norm(beta) > 1e3:
            raise EstimationError("quasi-separation")
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
    return beta, converged


@dataclass(frozen=True)
class GaussianPosterior:
    """Flat-prior posterior of theta = [beta_y_tilde, mills_coef] on the
    tested rows: mean (M'M)^-1 M'Y, covariance s^2 (M'M)^-1."""

    mean: np.ndarray
    cov: np.ndarray
    names: list[str]

    def variance(self, i: int) -> float:
        return float(self.cov[i, i])

    def conditional_on(self, idx: int, value: float) -> "GaussianPosterior":
        """Gaussian conditioning on one coordinate."""
        keep = [j for j in range(self.mean.size) if j != idx]
        s11 = self.cov[np.ix_(keep, keep)]
        s12 = self.cov[np.ix_(keep, [idx])]
        s22 = self.cov[idx, idx]
        mean = self.mean[keep] + (s12[:, 0] / s22) * (value - self.mean[idx])
        cov = s11 - s12 @ s12.T / s22
        return GaussianPosterior(mean, cov, [self.names[j] for j in keep])


def flat_prior_posterior(
    data: ObservedData,
    beta_t_tilde: np.ndarray,
    constrained_dim: tuple[int, float] | None = None,
) -> GaussianPosterior:
    """Exact flat-prior Gaussian posterior for [beta_y_tilde, mills_coef]
    given a fixed first-stage beta_t_tilde, over the tested rows.

    When ``constrained_dim = (d, value)`` the d-th column is dropped and the
    response is offset by column*value.
    """
    x_tested = data.x.values[data.t]
    y = data.y_tested()
    m = mills_design(x_tested, np.asarray(beta_t_tilde, dtype=float))
    names = [f"beta_y[{c}]" for c in data.x.column_names] + ["mills_coef"]
    if constrained_dim is not None:
        d_idx, value = constrained_dim
        y = y - m[:, d_idx] * value
        keep = [j for j in range(m.shape[1]) if j != d_idx]
        m = m[:, keep]
        names = [names[j] for j in keep]
    sv = np.linalg.svd(m, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        corr = np.corrcoef(m, rowvar=False)
        np.fill_diagonal(corr, 0)
        i, j = np.unravel_index(np.nanargmax(np.abs(corr)), corr.shape)
        raise EstimationError(f"rank-deficient design: columns {names[i]!r} and {names[j]!r}")
    mtm_inv = np.linalg.inv(m.T @ m)
    mean = mtm_inv @ (m.T @ y)
    resid = y - m @ mean
    dof = max(m.shape[0] - m.shape[1], 1)
    s_sq = float(resid @ resid) / dof
    return GaussianPosterior(mean, s_sq * mtm_inv, names)


def heckman_log_likelihood(params: HeckmanParams, data: ObservedData):
    """Selection-model log-likelihood with continuous tested outcomes.

    Tested rows: normal density of Y times the conditional probit term;
    untested rows: Phi(-x beta_t).  Evaluated in log space.
    """
    return _heckman_loglik_terms(
        params.beta_t_tilde,
        params.beta_y_tilde,
        params.rho_tilde,
        params.sigma_tilde_sq,
        data,
    )


def _heckman_loglik_terms(beta_t, beta_y, rho, sigma_sq, data: ObservedData):
    x = data.x.values
    xt_all = fm.matvec(x, beta_t)
    lp_untested = fm.total(fm.normal_logcdf(-xt_all[~data.t]))
    x_tested = x[data.t]
    y = data.y_tested()
    resid = y - fm.matvec(x_tested, beta_y)
    sigma = fm.sqrt(sigma_sq) if isinstance(sigma_sq, fm.Dual) else float(np.sqrt(sigma_sq))
    lp_y = fm.total(fm.normal_logpdf(resid / sigma)) - y.size * fm.log(sigma)
    cond_var = 1.0 - rho * rho / sigma_sq
    if float(fm.value(cond_var)) <= 0.0:
        raise ConfigurationError("need rho^2 < sigma^2")
    arg = (xt_all[data.t] + (rho / sigma_sq) * resid) / fm.sqrt(cond_var)
    lp_t = fm.total(fm.normal_logcdf(arg))
    return lp_untested + lp_y + lp_t


def simulate_heckman(params: HeckmanParams, x: DesignMatrix, seed: int) -> ObservedData:
    """Draw (u, Z) bivariate normal, set T = 1[x beta_t + u > 0] and reveal
    Y = x beta_y + Z on tested rows.  Deterministic per seed."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    n = x.n
    u = rng.standard_normal(n)
    # Z | u is normal with mean rho*u and variance sigma^2 - rho^2
    z = params.rho_tilde * u + np.sqrt(params.sigma_tilde_sq - params.rho_tilde**2) * rng.standard_normal(n)
    t = (x.values @ params.beta_t_tilde + u) > 0
    y_full = x.values @ params.beta_y_tilde + z
    y = np.where(t, y_full, np.nan)
    return ObservedData(x, t, y)


@dataclass(frozen=True)
class VarianceDecomposition:
    total_variance: float
    expected_conditional_variance: float
    variance_of_conditional_mean: float

    @property
    def residual(self) -> float:
        return self.total_variance - (
            self.expected_conditional_variance + self.variance_of_conditional_mean
        )


def variance_decomposition_check(draws, constrained: str, unconstrained: str, bins: int = 20):
    """Empirical law-of-total-variance split of posterior draws.

    Bins the draws by the constrained parameter into equal-mass bins and
    estimates E[Var(theta_u | theta_c)] and Var(E[theta_u | theta_c]).
    """
    c = draws.flat(constrained)
    u = draws.flat(unconstrained)
    if c.size < 2000:
        raise ValueError("need at least 2000 draws")
    edges = np.quantile(c, np.linspace(0, 1, bins + 1))
    idx = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, bins - 1)
    cond_vars, cond_means, weights = [], [], []
    for b in range(bins):
        sel = u[idx == b]
        if sel.size < 30:
            raise ValueError(f"bin {b} has only {sel.size} draws (< 30)")
        cond_vars.append(sel.var(ddof=1))
        cond_means.append(sel.mean())
        weights.append(sel.size)
    w = np.asarray(weights, dtype=float) / c.size
    e_var = float(np.sum(w * np.asarray(cond_vars)))
    mean_of_means = float(np.sum(w * np.asarray(cond_means)))
    var_e = float(np.sum(w * (np.asarray(cond_means) - mean_of_means) ** 2))
    return VarianceDecomposition(float(u.var(ddof=1)), e_var, var_e)


class HeckmanPosterior:
    """Log-posterior over the selection-model parameters for sampling.

    Free vector: [beta_y at free dims, beta_t (d), log sigma^2, eta] with
    rho = sigma * tanh(eta).  Expertise-masked dims drop beta_y_d from the
    free vector and pin it to beta_t_d * sigma^2 / rho, the deterministic
    rearrangement implied by beta_delta_d = 0.  The prevalence constraint is
    a soft quadratic penalty on mean(X beta_y).
    """

    dual_capable = True

    def __init__(self, data: ObservedData, constraints: ConstraintSet | None = None):
        self.data = data
        self.constraints = constraints or ConstraintSet()
        d = data.x.d
        self.mask = self.constraints.mask_for(d, data.x.intercept_index)
        self.free_y = ~self.mask
        self.names = (
            [f"beta_y[{n}]" for n, f in zip(data.x.column_names, self.free_y) if f]
            + [f"beta_t[{n}]" for n in data.x.column_names]
            + ["log_sigma_sq", "eta"]
        )
        self.dim = int(self.free_y.sum()) + d + 2

    def _assemble(self, vec):
        d = self.data.x.d
        n_free = int(self.free_y.sum())
        beta_y_free = vec[:n_free]
        beta_t = vec[n_free : n_free + d]
        sigma_sq = fm.exp(vec[n_free + d])
        sigma = fm.sqrt(sigma_sq)
        rho = sigma * fm.tanh(vec[n_free + d + 1])
        return beta_y_free, beta_t, rho, sigma_sq

    def unpack(self, vec) -> HeckmanParams:
        vec = np.asarray(fm.value(vec), dtype=float)
        beta_y_free, beta_t, rho, sigma_sq = self._assemble(vec)
        beta_y = self._full_beta_y(beta_y_free, beta_t, rho, sigma_sq)
        return HeckmanParams(np.asarray(beta_t), np.asarray(beta_y), float(rho), float(sigma_sq))

    def _full_beta_y(self, beta_y_free, beta_t, rho, sigma_sq):
        d = self.data.x.d
        if not self.mask.any():
            return beta_y_free
        parts = []
        k = 0
        for j in range(d):
            if self.free_y[j]:
                parts.append(beta_y_free[k])
                k += 1
            else:
                parts.append(beta_t[j] * sigma_sq / rho)
        if any(isinstance(p, fm.Dual) for p in parts):
            val = np.array([fm.value(p) for p in parts])
            jac = np.stack([p.jac if isinstance(p, fm.Dual) else np.zeros(self.dim) for p in parts])
            return fm.Dual(val, jac)
        return np.asarray(parts, dtype=float)

    def __call__(self, vec):
        lv = float(fm.value(vec[int(self.free_y.sum()) + self.data.x.d]))
        if not (-12.0 <= lv <= 12.0):
            return -np.inf
        beta_y_free, beta_t, rho, sigma_sq = self._assemble(vec)
        beta_y = self._full_beta_y(beta_y_free, beta_t, rho, sigma_sq)
        if self.mask.any() and abs(float(fm.value(rho))) < 1e-8:
            return -np.inf  # masked reparameterization undefined at rho = 0
        out = _heckman_loglik_terms(beta_t, beta_y, rho, sigma_sq, self.data)
        prev = self.constraints.prevalence
        if prev is not None:
            e_y = fm.mean(fm.matvec(self.data.x.values, beta_y))
            dev = e_y - prev.target
            out = out - prev.weight * self.data.n * dev * dev
        return out
