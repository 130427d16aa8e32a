"""Synthetic data generators for the three selective-labels families
(uniform, normal, Heckman), plus a policy-driven testing surrogate whose
tested subpopulation shows an inverted outcome trend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .data import DesignMatrix, ObservedData, add_interactions
from .heckman import HeckmanParams, map_general_to_heckman
from .model import ConfigurationError, Theta, uniform_event_probs_general

__all__ = [
    "GenConfig",
    "generate",
    "generate_policy_surrogate",
    "paper_uniform_config",
    "paper_heckman_config",
    "paper_normal_fixed_scale_config",
    "paper_normal_fixed_alpha_config",
    "paper_interaction_config",
]

def _draw(spec, rng: np.random.Generator) -> float:
    # spec is either a fixed float or a (mean, sd) pair drawn once per dataset
    if isinstance(spec, tuple):
        mean, sd = spec
        return float(mean + sd * rng.standard_normal())
    return float(spec)


@dataclass(frozen=True)
class GenConfig:
    """Recipe for one synthetic dataset.

    ``alpha_spec`` and ``scale_spec`` (and the two intercept specs) are
    either fixed floats or (mean, sd) pairs drawn once per dataset.  For
    the normal family ``scale`` is the unobservable standard deviation;
    for the uniform family it is the support width.  ``expertise_dims``
    pins those beta_delta coordinates to zero; ``expertise_fraction``
    instead draws a random subset of the non-intercept columns of that
    size (used by the interaction preset).
    """

    family: str
    n: int
    d: int
    seed: int
    alpha_spec: float | tuple[float, float] = 1.0
    scale_spec: float | tuple[float, float] = (2.0, 0.1)
    beta_y_intercept_spec: float | tuple[float, float] = (-2.0, 0.1)
    beta_delta_intercept_spec: float | tuple[float, float] = (2.0, 0.1)
    expertise_dims: tuple[int, ...] = ()
    expertise_fraction: float | None = None
    interactions: bool = False
    fixed_flag: str = "alpha_fixed"

    def __post_init__(self):
        if self.family not in ("heckman", "uniform", "normal"):
            raise ConfigurationError(f"unknown family {self.family!r}")
        if self.d < 2:
            raise ConfigurationError("need d >= 2 (intercept plus a feature)")
        if 0 in self.expertise_dims:
            raise ConfigurationError("expertise cannot cover the intercept")
        if self.expertise_dims and self.expertise_fraction is not None:
            raise ConfigurationError("give expertise_dims or expertise_fraction, not both")
        if self.expertise_fraction is not None and not (0 < self.expertise_fraction < 1):
            raise ConfigurationError("expertise_fraction must be in (0, 1)")


def _design(config: GenConfig, rng: np.random.Generator) -> DesignMatrix:
    raw = rng.standard_normal((config.n, config.d - 1))
    # empirical standardization so the DesignMatrix invariant holds exactly
    cols = (raw - raw.mean(axis=0)) / raw.std(axis=0)
    names = ("const",) + tuple(f"x{j}" for j in range(1, config.d))
    x = DesignMatrix(np.column_stack([np.ones(config.n), cols]), names, 0)
    if config.interactions:
        x = add_interactions(x)
    return x


def _expertise_indices(config: GenConfig, p: int, rng: np.random.Generator) -> tuple[int, ...]:
    if config.expertise_fraction is not None:
        free = np.arange(1, p)
        k = int(round(config.expertise_fraction * free.size))
        return tuple(sorted(rng.permutation(free)[:k].tolist()))
    return config.expertise_dims


def _draw_coefficients(config: GenConfig, p: int, rng: np.random.Generator):
    beta_y = rng.standard_normal(p)
    beta_y[0] = _draw(config.beta_y_intercept_spec, rng)
    beta_delta = rng.standard_normal(p)
    beta_delta[0] = _draw(config.beta_delta_intercept_spec, rng)
    mask = _expertise_indices(config, p, rng)
    beta_delta[list(mask)] = 0.0
    return beta_y, beta_delta, mask


def generate(config: GenConfig):
    """Draw one dataset and its ground truth, deterministically per seed.

    Returns ``(ObservedData, Theta)`` for the uniform and normal families
    and ``(ObservedData, HeckmanParams)`` for the Heckman family.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(config.seed)))
    x = _design(config, rng)
    alpha = _draw(config.alpha_spec, rng)
    scale = _draw(config.scale_spec, rng)
    beta_y, beta_delta, _ = _draw_coefficients(config, x.d, rng)

    if config.family == "heckman":
        params = map_general_to_heckman(alpha, scale**2, beta_y, beta_delta)
        u = rng.standard_normal(config.n)
        z = params.rho_tilde * u + np.sqrt(
            params.sigma_tilde_sq - params.rho_tilde**2
        ) * rng.standard_normal(config.n)
        t = (x.values @ params.beta_t_tilde + u) > 0
        y = np.where(t, x.values @ params.beta_y_tilde + z, np.nan)
        return ObservedData(x, t, y), params

    theta = Theta(alpha, scale, beta_y, beta_delta, config.fixed_flag)
    if config.family == "uniform":
        z = rng.uniform(0.0, scale, config.n)
    else:
        z = scale * rng.standard_normal(config.n)
    r = x.values @ beta_y + z
    y_full = rng.random(config.n) < special.expit(r)
    t = rng.random(config.n) < special.expit(alpha * r + x.values @ beta_delta)
    y = np.where(t, y_full.astype(float), np.nan)
    return ObservedData(x, t, y), theta


# surrogate constants: strong risk-dependent testing (alpha) over a wide
# unobservable support, with a policy term that saturates testing for high
# feature values so only the low-feature group is selected on Z
_SURROGATE_ALPHA = 6.0
_SURROGATE_SCALE = 10.0
_SURROGATE_RISK_SLOPE = 0.5
_SURROGATE_POLICY_SLOPE = 20.0
_SURROGATE_TEST_OFFSET = -44.0
_SURROGATE_PREVALENCE = 0.02


def generate_policy_surrogate(n: int, seed: int, policy: bool = True):
    """Dataset with a policy-driven testing rule that inverts the observed
    outcome trend in the tested subpopulation.

    True risk rises monotonically in the single feature.  Testing rises in
    the feature through the policy term, so high-feature rows are tested
    near-unconditionally while low-feature rows are tested only when the
    unobservable (hence the outcome risk) is high.  Binned E[Y | T=1,
    feature] is then non-monotone even though E[Y | feature] is monotone.

    With ``policy=False`` the policy slope is removed (the testing
    intercept only recenters the rate) and the unobservable support
    collapses, making Y and T conditionally independent given the feature;
    tested and population trends then agree.  The outcome intercept is
    solved per dataset so the population prevalence is 0.02.

    Returns ``(ObservedData, Theta, description)`` where description is a
    dict recording the mechanism, the realized population prevalence over
    all rows (untested included), and the testing rate.
    """
    if n < 1000:
        raise ConfigurationError("surrogate needs n >= 1000")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    raw = rng.standard_normal(n)
    f = (raw - raw.mean()) / raw.std()
    x = DesignMatrix(np.column_stack([np.ones(n), f]), ("const", "policy_feature"), 0)

    alpha = _SURROGATE_ALPHA
    scale = _SURROGATE_SCALE if policy else 1e-8

    def prevalence_gap(b0: float) -> float:
        x_y = b0 + _SURROGATE_RISK_SLOPE * f
        p_y1 = uniform_event_probs_general(x_y, np.zeros(n), alpha, scale)[3]
        return float(p_y1.mean()) - _SURROGATE_PREVALENCE
    b0 = optimize.brentq(prevalence_gap, -30.0, 10.0, xtol=1e-12)

    beta_y = np.array([b0, _SURROGATE_RISK_SLOPE])
    if policy:
        beta_delta = np.array(
            [_SURROGATE_TEST_OFFSET - alpha * b0, _SURROGATE_POLICY_SLOPE]
        )
    else:
        # zero policy slope; the intercept only recenters the testing rate
        beta_delta = np.array([-alpha * b0, 0.0])
    theta = Theta(alpha, scale, beta_y, beta_delta, "alpha_fixed")

    z = rng.uniform(0.0, scale, n)
    r = x.values @ beta_y + z
    y_full = rng.random(n) < special.expit(r)
    t = rng.random(n) < special.expit(alpha * r + x.values @ beta_delta)
    y = np.where(t, y_full.astype(float), np.nan)
    description = {
        "text": "policy surrogate: risk monotone in policy_feature; "
        + ("testing saturates at high feature values, selecting low-feature "
           "rows on the unobservable" if policy else "no policy slope, "
           "degenerate unobservable (no selection)"),
        "policy": policy,
        "artifact_designed": True,
        "population_prevalence": float(y_full.mean()),
        "testing_rate": float(t.mean()),
    }
    return ObservedData(x, t, y), theta, description


def paper_uniform_config(seed: int, n: int = 5000) -> GenConfig:
    """Uniform family, 5 columns, expertise on dims {2, 3, 4}."""
    return GenConfig(
        family="uniform", n=n, d=5, seed=seed,
        alpha_spec=1.0, scale_spec=(2.0, 0.1),
        expertise_dims=(2, 3, 4), fixed_flag="alpha_fixed",
    )


def paper_heckman_config(seed: int, n: int = 5000) -> GenConfig:
    return GenConfig(
        family="heckman", n=n, d=5, seed=seed,
        alpha_spec=1.0, scale_spec=(2.0, 0.1),
        expertise_dims=(2, 3, 4),
    )


def paper_normal_fixed_scale_config(seed: int, n: int = 5000) -> GenConfig:
    """Normal unobservables with the scale treated as known by the fitter."""
    return GenConfig(
        family="normal", n=n, d=5, seed=seed,
        alpha_spec=1.0, scale_spec=(2.0, 0.1),
        expertise_dims=(2, 3, 4), fixed_flag="scale_fixed",
    )


def paper_normal_fixed_alpha_config(seed: int, n: int = 200) -> GenConfig:
    """Small-n normal variant with alpha treated as known by the fitter."""
    return GenConfig(
        family="normal", n=n, d=5, seed=seed,
        alpha_spec=1.0, scale_spec=(2.0, 0.1),
        expertise_dims=(2, 3, 4), fixed_flag="alpha_fixed",
    )


def paper_interaction_config(seed: int, n: int = 5000) -> GenConfig:
    """Pairwise-interaction variant; expertise covers a random 60% of the
    non-intercept columns, drawn from the config seed."""
    return GenConfig(
        family="uniform", n=n, d=5, seed=seed,
        alpha_spec=1.0, scale_spec=(2.0, 0.1),
        expertise_fraction=0.6, interactions=True,
    )
