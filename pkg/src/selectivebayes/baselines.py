"""Reference estimators that ignore or reweight the selective labeling:
tested-only logistic regression, untested-as-negative, inverse propensity
weighting, and hard pseudo-labels.  All are deterministic given the data."""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .data import ObservedData

__all__ = [
    "SeparationError",
    "fit_logistic",
    "baseline_tested_only",
    "baseline_untested_negative",
    "baseline_ipw",
    "baseline_pseudo_labels",
]

PROPENSITY_CLIP = (0.05, 0.95)


class SeparationError(RuntimeError):
    pass


def fit_logistic(x: np.ndarray, labels, weights=None, max_iter=100, tol=1e-8):
    """Weighted maximum-likelihood logistic coefficients by Newton
    iterations; converged when the gradient max-norm is below tol.
    The maximizer is invariant to rescaling all weights."""
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if np.all(labels == labels[0]):
        raise SeparationError("labels are constant")
    w = np.ones(labels.size) if weights is None else np.asarray(weights, dtype=float)
    beta = np.zeros(x.shape[1])
    for _ in range(max_iter):
        p = expit(x @ beta)
        # perfect separation saturates p to the labels and kills the
        # gradient even though the maximizer is at infinity
        if np.max(np.abs(labels - p)) < 1e-6:
            raise SeparationError("perfect separation")
        grad = x.T @ (w * (labels - p))
        if np.max(np.abs(grad)) < tol:
            return beta
        hess = x.T @ (x * (w * p * (1 - p))[:, None])
        try:
            beta = beta + np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError as err:
            raise SeparationError("singular Hessian (separation)") from err
        if np.linalg.norm(beta) > 1e3:
            raise SeparationError("coefficients diverging (separation)")
    raise SeparationError("logistic fit did not converge")


def baseline_tested_only(data: ObservedData) -> np.ndarray:
    """p(Y=1 | T=1, X) by logistic regression on tested rows only; scores
    emitted for every row."""
    beta = fit_logistic(data.x.values[data.t], data.y_tested())
    return expit(data.x.values @ beta)


def baseline_untested_negative(data: ObservedData) -> np.ndarray:
    """Treats untested rows as negatives, so the fit targets
    p(T=1, Y=1 | X)."""
    labels = np.where(data.t, np.nan_to_num(data.y), 0.0)
    beta = fit_logistic(data.x.values, labels)
    return expit(data.x.values @ beta)


def baseline_ipw(data: ObservedData) -> np.ndarray:
    """Tested-only fit reweighted by inverse propensity of testing, with
    the propensity clipped to [0.05, 0.95]."""
    beta_t = fit_logistic(data.x.values, data.t.astype(float))
    propensity = np.clip(expit(data.x.values @ beta_t), *PROPENSITY_CLIP)
    beta = fit_logistic(
        data.x.values[data.t], data.y_tested(), weights=1.0 / propensity[data.t]
    )
    return expit(data.x.values @ beta)


def baseline_pseudo_labels(data: ObservedData) -> np.ndarray:
    """Tested-only fit, hard 0/1 pseudo-labels for untested rows at the 0.5
    threshold, then a refit on all rows.  At low prevalence every
    pseudo-label is 0 and the result equals baseline_untested_negative."""
    first = fit_logistic(data.x.values[data.t], data.y_tested())
    pseudo = (expit(data.x.values @ first) >= 0.5).astype(float)
    labels = np.where(data.t, np.nan_to_num(data.y), pseudo)
    beta = fit_logistic(data.x.values, labels)
    return expit(data.x.values @ beta)
