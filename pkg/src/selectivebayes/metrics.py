"""Evaluation metrics: percent reductions with bootstrap medians, the
top-vs-bottom quintile outcome ratio, AUC, and interval coverage."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = [
    "MetricsError",
    "TrialMetrics",
    "ReductionSummary",
    "ExperimentSummary",
    "pct_reduction",
    "aggregate_trials",
    "quintile_ratio",
    "auc",
    "coverage_check",
]

BOOTSTRAP_RESAMPLES = 2000
_BOOTSTRAP_SEED = 20_2000  # fixed so reports are reproducible


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TrialMetrics:
    """Per-trial interval widths and absolute errors, one array per
    parameter group (e.g. "beta_y", "beta_delta"), one entry per
    dimension of the group."""

    ci_width_unconstrained: dict[str, np.ndarray]
    ci_width_constrained: dict[str, np.ndarray]
    abs_err_unconstrained: dict[str, np.ndarray]
    abs_err_constrained: dict[str, np.ndarray]

    def __post_init__(self):
        fields = (
            self.ci_width_unconstrained,
            self.ci_width_constrained,
            self.abs_err_unconstrained,
            self.abs_err_constrained,
        )
        keys = set(self.ci_width_unconstrained)
        for d in fields:
            if set(d) != keys:
                raise MetricsError("metric dicts must share parameter groups")
            for group, arr in d.items():
                arr = np.asarray(arr, dtype=float)
                d[group] = arr
                if arr.ndim != 1 or arr.size == 0:
                    raise MetricsError(f"group {group!r} must be a non-empty vector")
                if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                    raise MetricsError(f"group {group!r} has negative or non-finite values")

    @property
    def groups(self) -> tuple[str, ...]:
        return tuple(self.ci_width_unconstrained)


@dataclass(frozen=True)
class ReductionSummary:
    median: float
    ci_low: float
    ci_high: float

    def __post_init__(self):
        if not (self.ci_low <= self.median <= self.ci_high):
            raise MetricsError("bootstrap CI must bracket the median")


@dataclass(frozen=True)
class ExperimentSummary:
    """Median percent reductions (constrained vs unconstrained) per group
    and metric, with bootstrap CIs; per-dimension medians are kept so both
    readings of the group aggregation can be inspected."""

    groups: dict[str, dict[str, ReductionSummary]]
    per_dimension: dict[str, dict[str, np.ndarray]]
    n_trials: int


def pct_reduction(base: float, new: float) -> float:
    """100 * (1 - new/base); negative when new is worse than base."""
    if not base > 0:
        raise MetricsError("pct_reduction needs base > 0")
    return 100.0 * (1.0 - new / base)


def _bootstrap_median_ci(values: np.ndarray, rng: np.random.Generator):
    n = values.size
    idx = rng.integers(0, n, size=(BOOTSTRAP_RESAMPLES, n))
    medians = np.median(values[idx], axis=1)
    lo, hi = np.percentile(medians, [2.5, 97.5])
    med = float(np.median(values))
    return ReductionSummary(med, min(float(lo), med), max(float(hi), med))


def aggregate_trials(trials: list, expertise_mask=None) -> ExperimentSummary:
    """Median percent reductions over trials, per group and metric.

    The interval widths (and errors) are averaged over the group's
    dimensions within each trial before the reduction ratio is taken.
    Dimensions flagged by ``expertise_mask`` are excluded from the
    "beta_delta" group, since those coordinates are pinned rather than
    estimated in the constrained fit.
    """
    if len(trials) < 10:
        raise MetricsError("need at least 10 trials")
    groups = trials[0].groups
    rng = np.random.Generator(np.random.Philox(key=np.uint64(_BOOTSTRAP_SEED)))
    pairs = {
        "ci_width": ("ci_width_unconstrained", "ci_width_constrained"),
        "abs_err": ("abs_err_unconstrained", "abs_err_constrained"),
    }
    out: dict[str, dict[str, ReductionSummary]] = {}
    per_dim: dict[str, dict[str, np.ndarray]] = {}
    for group in groups:
        keep = None
        if group == "beta_delta" and expertise_mask is not None:
            mask = np.asarray(expertise_mask, dtype=bool)
            keep = np.flatnonzero(~mask)
            size = trials[0].ci_width_unconstrained[group].size
            keep = keep[keep < size]
            if keep.size == 0:
                raise MetricsError(f"group {group!r} is empty after masking")
        out[group] = {}
        per_dim[group] = {}
        for metric, (base_f, new_f) in pairs.items():
            base = np.array([getattr(t, base_f)[group] for t in trials])
            new = np.array([getattr(t, new_f)[group] for t in trials])
            if keep is not None:
                base, new = base[:, keep], new[:, keep]
            reductions = np.array(
                [pct_reduction(b.mean(), w.mean()) for b, w in zip(base, new)]
            )
            out[group][metric] = _bootstrap_median_ci(reductions, rng)
            with np.errstate(divide="ignore", invalid="ignore"):
                dim_red = 100.0 * (1.0 - new / base)
            per_dim[group][metric] = np.median(dim_red, axis=0)
    return ExperimentSummary(out, per_dim, len(trials))


def _quintile_index(scores: np.ndarray) -> np.ndarray:
    # rank-based bins, ties broken by stable input order
    n = scores.size
    order = np.argsort(scores, kind="stable")
    rank = np.empty(n, dtype=int)
    rank[order] = np.arange(n)
    return (5 * rank) // n


def quintile_ratio(scores, outcomes) -> float:
    """Outcome rate in the top score quintile over the bottom quintile."""
    scores = np.asarray(scores, dtype=float)
    outcomes = np.asarray(outcomes, dtype=float)
    if scores.size < 50:
        raise MetricsError("need at least 50 rows")
    if np.all(outcomes == outcomes[0]):
        raise MetricsError("outcomes are constant")
    q = _quintile_index(scores)
    bottom = outcomes[q == 0].mean()
    top = outcomes[q == 4].mean()
    if bottom == 0:
        raise MetricsError("undefined ratio: bottom-quintile rate is zero")
    return float(top / bottom)


def auc(scores, outcomes) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    scores = np.asarray(scores, dtype=float)
    outcomes = np.asarray(outcomes, dtype=bool)
    n_pos = int(outcomes.sum())
    n_neg = outcomes.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("need both outcome classes")
    ranks = stats.rankdata(scores)
    u = ranks[outcomes].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def coverage_check(lower, upper, truth, names=None):
    """Fraction of trials whose interval contains the true value, per
    parameter.  Inputs are (n_trials, p) arrays; truth is (n_trials, p) or
    a single p-vector shared by all trials."""
    lower = np.atleast_2d(np.asarray(lower, dtype=float))
    upper = np.atleast_2d(np.asarray(upper, dtype=float))
    truth = np.asarray(truth, dtype=float)
    if truth.ndim == 1:
        truth = np.broadcast_to(truth, lower.shape)
    if lower.shape != upper.shape or lower.shape != truth.shape:
        raise MetricsError("interval and truth shapes disagree")
    if np.any(lower > upper):
        raise MetricsError("lower bound above upper bound")
    rates = ((lower <= truth) & (truth <= upper)).mean(axis=0)
    if names is not None:
        return dict(zip(names, rates.tolist()))
    return rates
