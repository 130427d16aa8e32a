"""Experiment and single-fit orchestration: per-trial seeded generation,
constrained and unconstrained fits, metric aggregation, and reports whose
bytes do not depend on the worker count."""

from __future__ import annotations

import concurrent.futures
import csv

import numpy as np

from . import fmath as fm
from .data import DesignMatrix, ObservedData
from .diagnostics import PosteriorSamples
from .heckman import HeckmanPosterior
from .ingest import train_test_split
from .metrics import TrialMetrics, _quintile_index, aggregate_trials, auc
from .model import (
    ConfigurationError,
    ConstraintSet,
    PrevalenceConstraint,
    PriorSpec,
    NormalModelPosterior,
    Theta,
    UniformModelPosterior,
    uniform_event_probs,
    uniform_event_probs_general,
)
from .runconfig import RunConfig
from .sampler import hmc_run
from .synthgen import GenConfig, generate

__all__ = ["run_experiment", "fit_single", "ExperimentError"]

MAX_UNRELIABLE_FRACTION = 0.20
# trial reliability: low divergence rate plus basic mixing thresholds; the
# ess floor keeps Monte Carlo error under ~16% of the posterior sd, which is
# plenty for summaries pooled across trials
RELIABLE_MAX_RHAT = 1.1
RELIABLE_MIN_ESS = 40.0
SCORE_DRAWS = 200  # posterior draws used for per-row score averages


class ExperimentError(RuntimeError):
    pass


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([master_seed, trial]).generate_state(1, np.uint64)[0])


def _population_prevalence(data: ObservedData, theta: Theta) -> float:
    """Closed-form mean of p(Y=1|X) under the ground truth; the 'known
    prevalence' handed to the constrained fit."""
    x_y = data.x.values @ theta.beta_y
    if theta.alpha == 1.0:
        p_y1 = uniform_event_probs(x_y, x_y + data.x.values @ theta.beta_delta, theta.scale)[3]
    else:
        p_y1 = uniform_event_probs_general(
            x_y, data.x.values @ theta.beta_delta, theta.alpha, theta.scale
        )[3]
    return float(np.mean(p_y1))


# weakly informative defaults: wide normal on coefficients and on the log of
# the positive parameter, so flat likelihood directions stay sampleable and
# chains do not collide with the hard support bound of the log-uniform prior
WEAK_PRIORS = PriorSpec(coef_sd=10.0, positive_log_sd=1.0)


def _build_posterior(family: str, data: ObservedData, theta, constraints: ConstraintSet):
    if family == "uniform":
        fixed_value = theta.alpha if theta.fixed_flag == "alpha_fixed" else theta.scale
        return UniformModelPosterior(
            data, constraints, priors=WEAK_PRIORS, positive_transform="softplus",
            fixed_value=fixed_value, fixed_flag=theta.fixed_flag,
        )
    if family == "normal":
        fixed_value = theta.alpha if theta.fixed_flag == "alpha_fixed" else theta.scale
        return NormalModelPosterior(
            data, constraints, priors=WEAK_PRIORS, positive_transform="softplus",
            fixed_value=fixed_value, fixed_flag=theta.fixed_flag,
        )
    if family == "heckman":
        return HeckmanPosterior(data, constraints)
    raise ConfigurationError(f"unknown family {family!r}")


def _is_reliable(samples: PosteriorSamples) -> bool:
    if not samples.reliable:
        return False
    rhats = [s.rhat for s in samples.summaries]
    esses = [s.ess_bulk for s in samples.summaries]
    return max(rhats) < RELIABLE_MAX_RHAT and min(esses) > RELIABLE_MIN_ESS


def _coordinate_stats(samples: PosteriorSamples, posterior):
    """Mean and central 95% interval per free coordinate, with the positive
    parameter mapped back from log space."""
    flat = samples.flat_all()
    names = list(samples.names)
    for j, name in enumerate(names):
        if name in ("scale", "alpha"):
            flat = flat.copy()
            flat[:, j] = posterior.positive_from_free(flat[:, j])
        elif name.startswith("log_"):
            flat = flat.copy()
            flat[:, j] = np.exp(flat[:, j])
            names[j] = name.removeprefix("log_")
    mean = flat.mean(axis=0)
    lo, hi = np.percentile(flat, [2.5, 97.5], axis=0)
    return dict(zip(names, zip(mean, lo, hi)))


def _truth_by_name(theta: Theta, columns) -> dict:
    truth = {f"beta_y[{c}]": v for c, v in zip(columns, theta.beta_y)}
    truth.update({f"beta_delta[{c}]": v for c, v in zip(columns, theta.beta_delta)})
    truth["scale"] = theta.scale
    truth["alpha"] = theta.alpha
    return truth


def _group_arrays(stats: dict, truth: dict, columns, mask):
    """TrialMetrics inputs for one fit; masked beta_delta dims that were
    not sampled contribute zero width and zero error (they are pinned and
    excluded from aggregation by the mask)."""
    widths: dict[str, np.ndarray] = {}
    errors: dict[str, np.ndarray] = {}
    for group, names in (
        ("beta_y", [f"beta_y[{c}]" for c in columns]),
        ("beta_delta", [f"beta_delta[{c}]" for c in columns]),
        ("scale", ["scale" if "scale" in stats else "alpha"]),
    ):
        w = np.zeros(len(names))
        e = np.zeros(len(names))
        for j, name in enumerate(names):
            if name in stats:
                mean, lo, hi = stats[name]
                w[j] = hi - lo
                e[j] = abs(mean - truth[name])
        widths[group] = w
        errors[group] = e
    return widths, errors


def run_trial(config: RunConfig, trial: int):
    """Generate one dataset and fit the unconstrained, prevalence, and
    expertise variants.  Returns per-variant TrialMetrics plus reliability
    flags; pure function of (config, trial)."""
    seed = trial_seed(config.seed, trial)
    gen = config.gen_config(seed=seed)
    if gen.family == "heckman":
        raise ConfigurationError(
            "run_experiment covers the Bernoulli families; use the exact "
            "selection-model posterior directly"
        )
    data, theta = generate(gen)
    columns = data.x.column_names
    mask = np.zeros(data.x.d, dtype=bool)
    mask[list(gen.expertise_dims)] = True
    sampler_config = config.sampler_config(seed=seed)

    target = config.prevalence_target()
    if target is None:
        target = _population_prevalence(data, theta)
    prevalence = PrevalenceConstraint(target, config.prevalence_weight())

    variants = {
        "unconstrained": ConstraintSet(),
        "prevalence": ConstraintSet(prevalence=prevalence),
        "expertise": ConstraintSet(expertise_mask=mask),
    }
    truth = _truth_by_name(theta, columns)
    stats = {}
    reliable = {}
    for label, constraints in variants.items():
        posterior = _build_posterior(gen.family, data, theta, constraints)
        samples = hmc_run(posterior, sampler_config, posterior.dim, posterior.names)
        stats[label] = _coordinate_stats(samples, posterior)
        reliable[label] = _is_reliable(samples)

    metrics = {}
    base_w, base_e = _group_arrays(stats["unconstrained"], truth, columns, mask)
    for label in ("prevalence", "expertise"):
        new_w, new_e = _group_arrays(stats[label], truth, columns, mask)
        metrics[label] = TrialMetrics(
            {g: base_w[g].copy() for g in base_w},
            new_w,
            {g: base_e[g].copy() for g in base_e},
            new_e,
        )
    return {
        "trial": trial,
        "seed": seed,
        "metrics": metrics,
        "reliable": all(reliable.values()),
        "reliability_detail": reliable,
    }


def _summary_payload(summary) -> dict:
    groups = {}
    for group in sorted(summary.groups):
        groups[group] = {}
        for metric in sorted(summary.groups[group]):
            r = summary.groups[group][metric]
            groups[group][metric] = {
                "median": r.median, "ci_low": r.ci_low, "ci_high": r.ci_high,
            }
    per_dim = {
        g: {m: summary.per_dimension[g][m] for m in sorted(summary.per_dimension[g])}
        for g in sorted(summary.per_dimension)
    }
    return {"groups": groups, "per_dimension": per_dim, "n_trials": summary.n_trials}


def run_experiment(config: RunConfig, out_dir=None):
    """Run all trials, aggregate the two constraint variants, and (when
    ``out_dir`` is given) write report.json and trials.csv there.

    Output is identical for any worker count: trials are keyed by index
    and every random stream derives from (master seed, trial index).
    """
    from .reports import ReportDocument

    indices = list(range(config.trials))
    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run_trial, [config] * len(indices), indices))
    else:
        results = [run_trial(config, i) for i in indices]

    excluded = [r["trial"] for r in results if not r["reliable"]]
    kept = [r for r in results if r["reliable"]]
    if len(excluded) > MAX_UNRELIABLE_FRACTION * len(results):
        raise ExperimentError(
            f"{len(excluded)} of {len(results)} trials unreliable (> 20%): {excluded}"
        )
    gen = config.gen_config()
    mask = np.zeros(gen.d, dtype=bool)
    mask[list(gen.expertise_dims)] = True

    summaries = {}
    for label in ("prevalence", "expertise"):
        trials = [r["metrics"][label] for r in kept]
        summaries[label] = aggregate_trials(trials, expertise_mask=mask)

    warnings = [f"trial {t} excluded as unreliable" for t in excluded]
    report = ReportDocument(
        seed=config.seed,
        config=config.raw,
        warnings=warnings,
        body={
            "command": "experiment",
            "family": gen.family,
            "n": gen.n,
            "d": gen.d,
            "trials_requested": config.trials,
            "trials_used": len(kept),
            "constraints": {
                label: _summary_payload(summaries[label]) for label in sorted(summaries)
            },
        },
    )
    if out_dir is not None:
        _write_outputs(out_dir, report, kept)
    return summaries, report


def _write_outputs(out_dir, report, kept):
    import pathlib

    out = pathlib.Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_bytes(report.to_json().encode())
    with open(out / "trials.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trial", "seed", "constraint", "group", "dim",
             "ci_width_unconstrained", "ci_width_constrained",
             "abs_err_unconstrained", "abs_err_constrained"]
        )
        for r in kept:
            for label in sorted(r["metrics"]):
                tm = r["metrics"][label]
                for group in tm.groups:
                    for j in range(tm.ci_width_unconstrained[group].size):
                        writer.writerow([
                            r["trial"], r["seed"], label, group, j,
                            repr(float(tm.ci_width_unconstrained[group][j])),
                            repr(float(tm.ci_width_constrained[group][j])),
                            repr(float(tm.abs_err_unconstrained[group][j])),
                            repr(float(tm.abs_err_constrained[group][j])),
                        ])


def _split_rows(data: ObservedData, train_frac: float, seed: int):
    train_idx, test_idx = train_test_split(data.n, train_frac, seed)
    out = []
    for idx in (train_idx, test_idx):
        x = DesignMatrix(
            data.x.values[idx], data.x.column_names, data.x.intercept_index,
            standardized=False,
        )
        out.append(ObservedData(x, data.t[idx], data.y[idx]))
    return out[0], out[1]


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite.hermgauss(32)


def _gh_sigmoid_mean(index, sd):
    """E[sigmoid(index + N(0, sd^2))] by Gauss-Hermite."""
    acc = 0.0
    for g, w in zip(_GH_NODES, _GH_WEIGHTS):
        acc = acc + (w / np.sqrt(np.pi)) / (1.0 + np.exp(-(index + np.sqrt(2.0) * g * sd)))
    return acc


def _event_probs_for(family: str, theta: Theta, x_values):
    x_y = x_values @ theta.beta_y
    x_d = x_values @ theta.beta_delta
    if family == "normal":
        p_y1 = _gh_sigmoid_mean(x_y, theta.scale)
        p_t1 = _gh_sigmoid_mean(theta.alpha * x_y + x_d, theta.alpha * theta.scale)
        return p_y1, p_t1
    if theta.alpha == 1.0:
        _, _, pt0, p_y1 = uniform_event_probs(x_y, x_y + x_d, theta.scale)
    else:
        _, _, pt0, p_y1 = uniform_event_probs_general(x_y, x_d, theta.alpha, theta.scale)
    return p_y1, 1.0 - pt0


def _score_draws(samples: PosteriorSamples, posterior, family: str, x_values):
    """Posterior means of p(Y=1|X) and p(T=1|X) over a thinned draw set."""
    flat = samples.flat_all()
    step = max(1, flat.shape[0] // SCORE_DRAWS)
    acc_y = acc_t = None
    count = 0
    for row in flat[::step]:
        p_y1, p_t1 = _event_probs_for(family, posterior.unpack(row), x_values)
        acc_y = p_y1 if acc_y is None else acc_y + p_y1
        acc_t = p_t1 if acc_t is None else acc_t + p_t1
        count += 1
    return acc_y / count, acc_t / count


def fit_single(config: RunConfig, data: ObservedData | None = None, out_dir=None):
    """One fit with the configured constraints on one dataset.

    Emits posterior summaries, per-row posterior means of p(Y=1|X) and
    p(T=1|X), a risk-quintile table, AUC on a held-out tested split, and
    (for the normal family) per-row posterior means of the unobservables.
    """
    from .reports import ReportDocument

    gen = config.gen_config()
    if gen.family == "heckman":
        raise ConfigurationError("fit_single covers the Bernoulli families")
    theta_truth = None
    if data is None:
        data, theta_truth = generate(gen)
    train, test = _split_rows(data, 0.7, config.seed)

    mask = np.zeros(data.x.d, dtype=bool)
    mask[[d for d in gen.expertise_dims if d < data.x.d]] = True
    constraints = ConstraintSet()
    target = config.prevalence_target()
    if target is not None:
        constraints = ConstraintSet(
            prevalence=PrevalenceConstraint(target, config.prevalence_weight())
        )
    if config.use_expertise() and mask.any():
        constraints = ConstraintSet(
            prevalence=constraints.prevalence,
            expertise_mask=mask,
        )

    if theta_truth is not None:
        fixed_value = (
            theta_truth.alpha if gen.fixed_flag == "alpha_fixed" else theta_truth.scale
        )
    else:
        spec = gen.alpha_spec if gen.fixed_flag == "alpha_fixed" else gen.scale_spec
        fixed_value = spec[0] if isinstance(spec, tuple) else spec
    if gen.family == "uniform":
        posterior = UniformModelPosterior(
            train, constraints, priors=WEAK_PRIORS, positive_transform="softplus",
            fixed_value=fixed_value, fixed_flag=gen.fixed_flag,
        )
    else:
        posterior = NormalModelPosterior(
            train, constraints, priors=WEAK_PRIORS, positive_transform="softplus",
            fixed_value=fixed_value, fixed_flag=gen.fixed_flag,
        )
    samples = hmc_run(posterior, config.sampler_config(), posterior.dim, posterior.names)

    p_y1, p_t1 = _score_draws(samples, posterior, gen.family, data.x.values)
    inferred_prevalence = float(np.mean(p_y1))

    # risk-quintile table over all rows; outcome rates only where tested
    q = _quintile_index(p_y1)
    quintiles = []
    for j in range(5):
        sel = q == j
        tested = sel & data.t
        quintiles.append({
            "quintile": j + 1,
            "mean_score": float(p_y1[sel].mean()),
            "testing_rate": float(data.t[sel].mean()),
            "tested_outcome_rate": float(data.y[tested].mean()) if tested.any() else float("nan"),
        })

    test_idx = _test_indices(data.n, config.seed)
    tested_mask = data.t[test_idx]
    auc_value = None
    held_out_y = data.y[test_idx][tested_mask]
    if tested_mask.any() and held_out_y.min() != held_out_y.max():
        auc_value = auc(p_y1[test_idx][tested_mask], held_out_y > 0.5)

    summary_rows = [
        {
            "name": s.name, "mean": s.mean, "sd": s.sd,
            "q2_5": s.q2_5, "q97_5": s.q97_5, "rhat": s.rhat, "ess_bulk": s.ess_bulk,
        }
        for s in samples.summaries
    ]
    body = {
        "command": "fit",
        "family": gen.family,
        "n": data.n,
        "constraints": {
            "prevalence_target": target,
            "expertise_dims": sorted(int(i) for i in np.flatnonzero(mask)),
        },
        "posterior": summary_rows,
        "inferred_prevalence": inferred_prevalence,
        "quintile_table": quintiles,
        "auc_held_out_tested": auc_value,
        "divergence_fraction": samples.divergence_fraction,
        "scores": {
            "p_y1": p_y1,
            "p_t1": p_t1,
        },
    }
    if gen.family == "normal":
        latent = samples.flat_all()[:, posterior.n_theta :]
        body["posterior_mean_unobservables"] = latent.mean(axis=0)
    warnings = []
    if not _is_reliable(samples):
        warnings.append("fit flagged unreliable (divergences or poor mixing)")
    report = ReportDocument(
        seed=config.seed, config=config.raw, warnings=warnings, body=body
    )
    if out_dir is not None:
        import pathlib

        out = pathlib.Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_bytes(report.to_json().encode())
    return report, samples


def _test_indices(n: int, seed: int):
    return train_test_split(n, 0.7, seed)[1]
