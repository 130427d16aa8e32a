"""Model parameters, marginalized likelihoods, and domain constraints.

The central object is the Bernoulli-sigmoid outcome/testing model with a
uniform unobservable Z ~ Uniform(0, scale).  For testing slope alpha = 1 the
per-row event probabilities have closed forms; we evaluate them through
softplus differences and a log-space joint with a series branch near the
removable singularity at x_t = x_y.  For other alpha the marginals stay in
closed form and the joint falls back to fixed-order Gauss-Legendre
quadrature.  Everything here accepts plain arrays or fmath duals, so
gradients come from forward-mode AD with no extra code.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import fmath as fm
from .data import ObservedData

__all__ = [
    "Theta",
    "PrevalenceConstraint",
    "ConstraintSet",
    "RowLikelihood",
    "PriorSpec",
    "row_probs_uniform",
    "row_probs_uniform_alpha2",
    "uniform_event_probs",
    "uniform_event_probs_general",
    "log_likelihood_uniform",
    "log_joint_normal",
    "prevalence_penalty",
    "apply_expertise_mask",
    "UniformModelPosterior",
    "NormalModelPosterior",
    "log_posterior",
]

SERIES_HALF_WIDTH = 1e-6  # |x_t - x_y| below which the joint uses the series

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(64)
_GL_NODES_FINE, _GL_WEIGHTS_FINE = np.polynomial.legendre.leggauss(192)


class LikelihoodError(ArithmeticError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Theta:
    """Parameters of the general model.

    ``scale`` is the support width of the uniform unobservable (or the sd of
    the normal variant).  ``beta_t`` is derived, never stored.  For
    binary-outcome models exactly one of alpha/scale is estimable; the
    ``fixed_flag`` records which one is pinned.
    """

    alpha: float
    scale: float
    beta_y: np.ndarray
    beta_delta: np.ndarray
    fixed_flag: str = "alpha_fixed"  # or "scale_fixed"

    def __post_init__(self):
        object.__setattr__(self, "beta_y", np.asarray(self.beta_y, dtype=float))
        object.__setattr__(self, "beta_delta", np.asarray(self.beta_delta, dtype=float))
        if not (self.alpha > 0):
            raise ConfigurationError("alpha must be positive")
        if not (self.scale > 0):
            raise ConfigurationError("scale must be positive")
        if self.fixed_flag not in ("alpha_fixed", "scale_fixed"):
            raise ConfigurationError(f"unknown fixed_flag {self.fixed_flag!r}")
        if self.beta_y.shape != self.beta_delta.shape or self.beta_y.ndim != 1:
            raise ConfigurationError("beta_y and beta_delta must be d-vectors")

    @property
    def beta_t(self) -> np.ndarray:
        return self.alpha * self.beta_y + self.beta_delta

    @property
    def d(self) -> int:
        return self.beta_y.size


@dataclass(frozen=True)
class PrevalenceConstraint:
    target: float
    weight: float = 1e4
    mode: str = "soft"

    def __post_init__(self):
        if not (0.0 < self.target < 1.0):
            raise ConfigurationError("prevalence target must be in (0, 1)")
        if not (self.weight > 0):
            raise ConfigurationError("prevalence weight must be positive")
        if self.mode != "soft":
            raise ConfigurationError("only soft prevalence constraints are supported")


@dataclass(frozen=True)
class ConstraintSet:
    prevalence: PrevalenceConstraint | None = None
    expertise_mask: np.ndarray | None = None  # True => beta_delta pinned to 0

    def __post_init__(self):
        if self.expertise_mask is not None:
            object.__setattr__(self, "expertise_mask", np.asarray(self.expertise_mask, dtype=bool))

    def mask_for(self, d: int, intercept_index: int) -> np.ndarray:
        if self.expertise_mask is None:
            return np.zeros(d, dtype=bool)
        m = self.expertise_mask
        if m.shape != (d,):
            raise ConfigurationError("expertise mask length does not match feature count")
        if m[intercept_index]:
            raise ConfigurationError("expertise mask may not cover the intercept")
        return m


@dataclass(frozen=True)
class RowLikelihood:
    """Per-row marginal event probabilities of the uniform model."""

    p_y1_t1: float
    p_y0_t1: float
    p_t0: float
    p_y1: float

    def __post_init__(self):
        probs = (self.p_y1_t1, self.p_y0_t1, self.p_t0, self.p_y1)
        if not all(np.isfinite(probs)):
            raise LikelihoodError("likelihood overflow: non-finite probability")
        if not all(-1e-12 <= p <= 1.0 + 1e-12 for p in probs):
            raise LikelihoodError("probability outside [0, 1]")
        if abs(self.p_y1_t1 + self.p_y0_t1 + self.p_t0 - 1.0) > 1e-10:
            raise LikelihoodError("event probabilities do not sum to 1")
        if self.p_y1_t1 > self.p_y1 + 1e-12:
            raise LikelihoodError("joint probability exceeds marginal")


@dataclass(frozen=True)
class PriorSpec:
    """Priors for the sampled model.

    Default: improper flat priors on the coefficients and a log-uniform
    prior on the free positive parameter restricted to
    [positive_lo, positive_hi].  Setting ``coef_sd`` switches the
    coefficients to zero-mean normal priors with that sd; setting
    ``positive_log_sd`` adds a normal prior on the log of the positive
    parameter, which keeps chains off the hard support boundary when the
    data leave that parameter weakly identified.
    """

    coef_sd: float | None = None
    positive_lo: float = 1e-3
    positive_hi: float = 1e3
    positive_log_mean: float = 0.0
    positive_log_sd: float | None = None


# narrow supports: softplus differences cancel catastrophically, so switch
# to 2-point Gauss-Legendre on [0, width] (error O(width^4))
NARROW_WIDTH = 1e-3
_GL2_LO = 0.5 * (1.0 - 1.0 / np.sqrt(3.0))
_GL2_HI = 0.5 * (1.0 + 1.0 / np.sqrt(3.0))


def _narrow(width) -> bool:
    return float(fm.value(width)) < NARROW_WIDTH


def _marginal_up(idx, width):
    """(1/width) * integral_0^width sigmoid(idx + u) du via softplus."""
    if _narrow(width):
        return 0.5 * (fm.sigmoid(idx + _GL2_LO * width) + fm.sigmoid(idx + _GL2_HI * width))
    return (fm.softplus(idx + width) - fm.softplus(idx)) / width


def _marginal_down(idx, width):
    """(1/width) * integral_0^width (1 - sigmoid(idx + u)) du, computed
    directly so small probabilities keep relative accuracy."""
    if _narrow(width):
        return 0.5 * (fm.sigmoid(-idx - _GL2_LO * width) + fm.sigmoid(-idx - _GL2_HI * width))
    return (fm.softplus(-idx) - fm.softplus(-idx - width)) / width


def uniform_event_probs(x_y, x_t, scale):
    """Closed-form event probabilities for the alpha = 1 uniform model.

    Returns (p_y1_t1, p_y0_t1, p_t0, p_y1); inputs may be arrays or duals.
    The joint uses the stable factored form of the closed-form integral,
    switching to a second-order series where |x_t - x_y| < 1e-6.
    """
    s = scale
    p_y1 = _marginal_up(x_y, s)
    p_t1 = _marginal_up(x_t, s)
    p_t0 = _marginal_down(x_t, s)
    q_y = _marginal_down(x_y, s)

    if _narrow(s):
        p11 = 0.5 * (
            fm.sigmoid(x_y + _GL2_LO * s) * fm.sigmoid(x_t + _GL2_LO * s)
            + fm.sigmoid(x_y + _GL2_HI * s) * fm.sigmoid(x_t + _GL2_HI * s)
        )
        return p11, p_t1 - p11, p_t0, p_y1

    xyv, xtv = fm.value(x_y), fm.value(x_t)
    delta = x_t - x_y
    swap = xtv < xyv
    q_small = fm.where(swap, p_t0, q_y)
    q_big = fm.where(swap, q_y, p_t0)
    dabs = fm.where(swap, x_y - x_t, delta)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = fm.exp(-dabs)
        p11_main = 1.0 - (q_small - w * q_big) / (1.0 - w)

    near = np.abs(xtv - xyv) < SERIES_HALF_WIDTH
    if not np.any(near):
        return p11_main, p_t1 - p11_main, p_t0, p_y1

    # series in delta around x_t = x_y, from the antiderivatives of
    # sigmoid powers; truncation error < 1e-12 at the switch point
    sig0 = fm.sigmoid(x_y)
    sig1 = fm.sigmoid(x_y + s)
    d_sig = sig1 - sig0
    d_sig2 = sig1 * sig1 - sig0 * sig0
    d_sig3 = sig1 * sig1 * sig1 - sig0 * sig0 * sig0
    f0 = p_y1 - d_sig / s
    f1 = d_sig2 / (2.0 * s)
    f2 = (d_sig2 / 2.0 - (2.0 / 3.0) * d_sig3) / s
    p11_series = f0 + delta * f1 + (delta * delta) * (0.5 * f2)

    p11 = fm.where(near, p11_series, p11_main)
    p01 = p_t1 - p11
    return p11, p01, p_t0, p_y1


def uniform_event_probs_general(x_y, x_delta, alpha, scale):
    """Event probabilities of the uniform model for arbitrary alpha > 0.

    The testing index at unobservable z is alpha*(x_y + z) + x_delta.  The
    marginals stay in closed form for any alpha; the joint is integrated by
    64-node Gauss-Legendre over [0, scale].
    """
    if not isinstance(alpha, fm.Dual) and float(alpha) == 1.0:
        return uniform_event_probs(x_y, x_y + x_delta, scale)
    s = scale
    c = alpha * x_y + x_delta
    a_s = alpha * s
    p_y1 = _marginal_up(x_y, s)
    p_t1 = _marginal_up(c, a_s)
    p_t0 = _marginal_down(c, a_s)

    # steep integrands (large alpha * scale) need the finer rule
    if (1.0 + abs(float(fm.value(alpha)))) * float(fm.value(scale)) > 20.0:
        nodes, weights = _GL_NODES_FINE, _GL_WEIGHTS_FINE
    else:
        nodes, weights = _GL_NODES, _GL_WEIGHTS
    p11 = None
    for u, w in zip(nodes, weights):
        z = s * (0.5 * (u + 1.0))
        term = (0.5 * w) * fm.sigmoid(x_y + z) * fm.sigmoid(c + alpha * z)
        p11 = term if p11 is None else p11 + term
    p01 = p_t1 - p11
    return p11, p01, p_t0, p_y1


def _check_finite_probs(probs, context):
    vals = np.concatenate([np.atleast_1d(fm.value(p)) for p in probs])
    if not np.all(np.isfinite(vals)):
        bad = np.where(~np.isfinite(np.atleast_1d(fm.value(probs[0]))))[0]
        raise LikelihoodError(f"likelihood overflow in {context} (rows {bad[:5].tolist()} ...)")


def row_probs_uniform(x_y: float, x_t: float, scale: float) -> RowLikelihood:
    """Closed-form event probabilities for a single row at alpha = 1."""
    if not (scale > 0):
        raise ConfigurationError("scale must be positive")
    if not (np.isfinite(x_y) and np.isfinite(x_t)):
        raise LikelihoodError("likelihood overflow: non-finite index")
    p11, p01, pt0, py1 = uniform_event_probs(np.array([x_y]), np.array([x_t]), scale)
    _check_finite_probs((p11, p01, pt0, py1), f"row_probs_uniform(x_y={x_y}, x_t={x_t})")
    return RowLikelihood(float(p11[0]), float(p01[0]), float(pt0[0]), float(py1[0]))


def row_probs_uniform_alpha2(x_y: float, x_delta: float, scale: float) -> RowLikelihood:
    """Event probabilities for alpha = 2 (testing index 2*(x_y + z) + x_delta)."""
    if not (scale > 0):
        raise ConfigurationError("scale must be positive")
    p11, p01, pt0, py1 = uniform_event_probs_general(
        np.array([x_y]), np.array([x_delta]), 2.0, scale
    )
    _check_finite_probs((p11, p01, pt0, py1), f"row_probs_uniform_alpha2(x_y={x_y})")
    return RowLikelihood(float(p11[0]), float(p01[0]), float(pt0[0]), float(py1[0]))


def _event_log_probs(data: ObservedData, p11, p01, pt0):
    """Per-row log-probability of the observed event."""
    t = data.t
    y1 = t & (np.nan_to_num(data.y) > 0.5)
    p_obs = fm.where(t, fm.where(y1, p11, p01), pt0)
    vals = fm.value(p_obs)
    n_zero = int(np.sum(vals <= 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        lp = fm.log(p_obs)
    return lp, n_zero


def log_likelihood_uniform(theta: Theta, data: ObservedData, with_diagnostics: bool = False):
    """Marginal log-likelihood of the uniform-unobservables model.

    Rows contribute log p(Y=1,T=1), log p(Y=0,T=1), or log p(T=0) according
    to the observed event.  Rows whose observed event has probability zero
    drive the result to -inf; their count is available via
    ``with_diagnostics=True``.
    """
    x = data.x.values
    x_y = x @ theta.beta_y
    x_delta = x @ theta.beta_delta
    if theta.alpha == 1.0:
        p11, p01, pt0, _ = uniform_event_probs(x_y, x_y + x_delta, theta.scale)
    else:
        p11, p01, pt0, _ = uniform_event_probs_general(x_y, x_delta, theta.alpha, theta.scale)
    lp, n_zero = _event_log_probs(data, p11, p01, pt0)
    out = -np.inf if n_zero else float(fm.total(lp))
    if with_diagnostics:
        return out, n_zero
    return out


def log_joint_normal(theta: Theta, z, data: ObservedData):
    """Joint log-density of the normal-unobservables model at latent z.

    Sum of N(0, scale^2) log-densities of z plus Bernoulli log-likelihoods of
    T (all rows) and Y (tested rows) at r = x_y + z.
    """
    x = data.x.values
    return _normal_joint_terms(
        theta.alpha, theta.scale, x @ theta.beta_y, x @ theta.beta_delta, z, data
    )


def _normal_joint_terms(alpha, scale, x_y, x_delta, z, data: ObservedData):
    zv = fm.value(z)
    if not np.all(np.isfinite(zv)):
        raise LikelihoodError("non-finite latent values")
    r = x_y + z
    t_idx = alpha * r + x_delta
    lp_z = fm.total(fm.normal_logpdf(z / scale)) - zv.size * fm.log(scale)
    t_sign = np.where(data.t, 1.0, -1.0)
    lp_t = -fm.total(fm.softplus(-t_sign * t_idx))
    y_sign = np.where(np.nan_to_num(data.y) > 0.5, 1.0, -1.0)[data.t]
    lp_y = -fm.total(fm.softplus(-y_sign * r[data.t]))
    return lp_z + lp_t + lp_y


def prevalence_penalty(theta: Theta, data: ObservedData, constraint: ConstraintSet):
    """Soft quadratic prevalence penalty -weight * n * (E_hat[Y] - target)^2,
    with E_hat[Y] the mean closed-form p(Y=1|X) under theta."""
    if constraint.prevalence is None:
        raise ConfigurationError("no prevalence constraint configured")
    p_y1 = _marginal_up(data.x.values @ theta.beta_y, theta.scale)
    return _penalty_from_mean(fm.mean(p_y1), constraint.prevalence, data.n)


def _penalty_from_mean(e_y, prev: PrevalenceConstraint, n: int):
    dev = e_y - prev.target
    return -prev.weight * n * dev * dev


def apply_expertise_mask(theta: Theta, constraint: ConstraintSet, intercept_index: int = 0) -> Theta:
    """Zero the masked beta_delta entries.  The sampler removes masked
    dimensions from the free vector entirely; this helper produces the
    corresponding point estimate."""
    mask = constraint.mask_for(theta.d, intercept_index)
    if not mask.any():
        return theta
    bd = theta.beta_delta.copy()
    bd[mask] = 0.0
    return replace(theta, beta_delta=bd)


# ---------------------------------------------------------------------------
# posterior assembly


class UniformModelPosterior:
    """Callable log-posterior of the marginalized uniform model.

    Free vector layout: [beta_y (d), beta_delta at unmasked dims, log(free
    positive parameter)].  Which of alpha/scale is free follows
    ``fixed_flag``; the other is pinned to ``fixed_value``.
    Calls accept plain vectors or fmath duals.
    """

    dual_capable = True

    def __init__(
        self,
        data: ObservedData,
        constraints: ConstraintSet | None = None,
        priors: PriorSpec | None = None,
        fixed_value: float = 1.0,
        fixed_flag: str = "alpha_fixed",
        positive_transform: str = "log",
    ):
        self.data = data
        self.constraints = constraints or ConstraintSet()
        self.priors = priors or PriorSpec()
        self.fixed_value = float(fixed_value)
        self.fixed_flag = fixed_flag
        if positive_transform not in ("log", "softplus"):
            raise ConfigurationError("positive_transform must be 'log' or 'softplus'")
        # "softplus" samples u with positive = softplus(u): near-identity
        # above ~1, which keeps the ridge between the positive parameter and
        # the intercepts close to linear so a dense HMC metric absorbs it
        self.positive_transform = positive_transform
        d = data.x.d
        self.mask = self.constraints.mask_for(d, data.x.intercept_index)
        self.free_delta = ~self.mask
        self.x_delta_free = data.x.values[:, self.free_delta]
        self.names = (
            [f"beta_y[{name}]" for name in data.x.column_names]
            + [f"beta_delta[{name}]" for name, f in zip(data.x.column_names, self.free_delta) if f]
            + (["scale"] if fixed_flag == "alpha_fixed" else ["alpha"])
        )
        self.dim = d + int(self.free_delta.sum()) + 1

    def unpack(self, vec) -> Theta:
        vec = np.asarray(fm.value(vec), dtype=float)
        d = self.data.x.d
        n_free = int(self.free_delta.sum())
        beta_delta = np.zeros(d)
        beta_delta[self.free_delta] = vec[d : d + n_free]
        positive = float(self.positive_from_free(vec[-1]))
        if self.fixed_flag == "alpha_fixed":
            alpha, scale = self.fixed_value, positive
        else:
            alpha, scale = positive, self.fixed_value
        return Theta(alpha, scale, vec[:d], beta_delta, self.fixed_flag)

    def positive_from_free(self, u):
        if self.positive_transform == "softplus":
            return np.logaddexp(0.0, np.asarray(u, dtype=float))
        return np.exp(np.asarray(u, dtype=float))

    def __call__(self, vec):
        d = self.data.x.d
        n_free = int(self.free_delta.sum())
        u = vec[-1]
        if self.positive_transform == "softplus":
            positive = fm.softplus(u)
            log_pos = fm.log(positive)
        else:
            log_pos = u
            positive = fm.exp(log_pos)
        lo, hi = np.log(self.priors.positive_lo), np.log(self.priors.positive_hi)
        if not (lo <= float(fm.value(log_pos)) <= hi):
            return -np.inf
        if self.fixed_flag == "alpha_fixed":
            alpha, scale = self.fixed_value, positive
        else:
            alpha, scale = positive, self.fixed_value

        beta_y = vec[:d]
        beta_delta_free = vec[d : d + n_free]
        x = self.data.x.values
        x_y = fm.matvec(x, beta_y)
        x_delta = fm.matvec(self.x_delta_free, beta_delta_free)

        if isinstance(alpha, float) and alpha == 1.0:
            p11, p01, pt0, p_y1 = uniform_event_probs(x_y, x_y + x_delta, scale)
        else:
            p11, p01, pt0, p_y1 = uniform_event_probs_general(x_y, x_delta, alpha, scale)
        lp, n_zero = _event_log_probs(self.data, p11, p01, pt0)
        if n_zero:
            return -np.inf
        out = fm.total(lp)

        if self.constraints.prevalence is not None:
            out = out + _penalty_from_mean(fm.mean(p_y1), self.constraints.prevalence, self.data.n)
        if self.priors.coef_sd is not None:
            coefs = vec[: d + n_free]
            out = out - 0.5 * fm.total(coefs * coefs) / self.priors.coef_sd**2
        if self.priors.positive_log_sd is not None:
            dev = (log_pos - self.priors.positive_log_mean) / self.priors.positive_log_sd
            out = out - 0.5 * dev * dev
        # priors on the positive parameter are densities in log space; when
        # sampling u = softplus^-1 add log|d log(pos)/du| = log sigmoid(u)
        # - log pos.  The plain log transform has no extra term.
        if self.positive_transform == "softplus":
            out = out + fm.log(fm.sigmoid(u)) - log_pos
        return out


class NormalModelPosterior:
    """Log-posterior of the normal-unobservables model with latent z sampled
    jointly with the parameters.

    Free vector layout: [beta_y (d), beta_delta at unmasked dims, log(free
    positive parameter), z (n)].  The prevalence penalty uses the
    Gauss-Hermite marginal p(Y=1|X) so it matches the model's implied
    population prevalence rather than the sampled latents.
    """

    dual_capable = True
    _GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(32)

    def __init__(
        self,
        data: ObservedData,
        constraints: ConstraintSet | None = None,
        priors: PriorSpec | None = None,
        fixed_value: float = 1.0,
        fixed_flag: str = "alpha_fixed",
        positive_transform: str = "log",
    ):
        self.data = data
        self.constraints = constraints or ConstraintSet()
        self.priors = priors or PriorSpec()
        self.fixed_value = float(fixed_value)
        self.fixed_flag = fixed_flag
        if positive_transform not in ("log", "softplus"):
            raise ConfigurationError("positive_transform must be 'log' or 'softplus'")
        # "softplus" samples u with positive = softplus(u): near-identity
        # above ~1, which keeps the ridge between the positive parameter and
        # the intercepts close to linear so a dense HMC metric absorbs it
        self.positive_transform = positive_transform
        d = data.x.d
        self.mask = self.constraints.mask_for(d, data.x.intercept_index)
        self.free_delta = ~self.mask
        self.x_delta_free = data.x.values[:, self.free_delta]
        self.n_theta = d + int(self.free_delta.sum()) + 1
        self.names = (
            [f"beta_y[{name}]" for name in data.x.column_names]
            + [f"beta_delta[{name}]" for name, f in zip(data.x.column_names, self.free_delta) if f]
            + (["scale"] if fixed_flag == "alpha_fixed" else ["alpha"])
            + [f"z[{i}]" for i in range(data.n)]
        )
        self.dim = self.n_theta + data.n

    def unpack(self, vec) -> Theta:
        vec = np.asarray(fm.value(vec), dtype=float)
        d = self.data.x.d
        n_free = int(self.free_delta.sum())
        beta_delta = np.zeros(d)
        beta_delta[self.free_delta] = vec[d : d + n_free]
        positive = float(self.positive_from_free(vec[d + n_free]))
        if self.fixed_flag == "alpha_fixed":
            alpha, scale = self.fixed_value, positive
        else:
            alpha, scale = positive, self.fixed_value
        return Theta(alpha, scale, vec[:d], beta_delta, self.fixed_flag)

    def positive_from_free(self, u):
        if self.positive_transform == "softplus":
            return np.logaddexp(0.0, np.asarray(u, dtype=float))
        return np.exp(np.asarray(u, dtype=float))

    def marginal_p_y1(self, beta_y, scale):
        """Gauss-Hermite marginal of p(Y=1|X) over z ~ N(0, scale^2)."""
        x_y = fm.matvec(self.data.x.values, beta_y)
        acc = None
        for g, w in zip(self._GH_NODES, self._GH_WEIGHTS):
            term = (w / np.sqrt(np.pi)) * fm.sigmoid(x_y + (np.sqrt(2.0) * g) * scale)
            acc = term if acc is None else acc + term
        return acc

    def __call__(self, vec):
        d = self.data.x.d
        n_free = int(self.free_delta.sum())
        u = vec[self.n_theta - 1]
        if self.positive_transform == "softplus":
            positive = fm.softplus(u)
            log_pos = fm.log(positive)
        else:
            log_pos = u
            positive = fm.exp(log_pos)
        lo, hi = np.log(self.priors.positive_lo), np.log(self.priors.positive_hi)
        if not (lo <= float(fm.value(log_pos)) <= hi):
            return -np.inf
        if self.fixed_flag == "alpha_fixed":
            alpha, scale = self.fixed_value, positive
        else:
            alpha, scale = positive, self.fixed_value
        beta_y = vec[:d]
        beta_delta_free = vec[d : d + n_free]
        z = vec[self.n_theta :]
        x = self.data.x.values
        x_y = fm.matvec(x, beta_y)
        x_delta = fm.matvec(self.x_delta_free, beta_delta_free)
        out = _normal_joint_terms(alpha, scale, x_y, x_delta, z, self.data)
        # log|dz/d log scale| terms are absent because z is sampled directly,
        # and the positive parameter carries a log-uniform prior
        if self.constraints.prevalence is not None:
            e_y = fm.mean(self.marginal_p_y1(beta_y, scale))
            out = out + _penalty_from_mean(e_y, self.constraints.prevalence, self.data.n)
        if self.priors.coef_sd is not None:
            coefs = vec[: d + n_free]
            out = out - 0.5 * fm.total(coefs * coefs) / self.priors.coef_sd**2
        if self.priors.positive_log_sd is not None:
            dev = (log_pos - self.priors.positive_log_mean) / self.priors.positive_log_sd
            out = out - 0.5 * dev * dev
        if self.positive_transform == "softplus":
            out = out + fm.log(fm.sigmoid(u)) - log_pos
        return out


def log_posterior(theta_free, data: ObservedData, constraints: ConstraintSet | None = None,
                  priors: PriorSpec | None = None, fixed_value: float = 1.0,
                  fixed_flag: str = "alpha_fixed"):
    """Log-posterior of the marginalized uniform model at a free vector."""
    target = UniformModelPosterior(data, constraints, priors, fixed_value, fixed_flag)
    return target(theta_free)
