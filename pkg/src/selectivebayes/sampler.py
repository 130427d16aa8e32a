"""Self-contained Hamiltonian Monte Carlo with no-U-turn trajectories.

Trajectories grow by multiplicative doubling with the no-U-turn stopping
criterion; step size adapts by dual averaging and a diagonal mass matrix is
re-estimated over expanding warmup windows, with the dual-averaging state
reset after each mass update.  Chains can optionally be started from a
jittered posterior mode.  Each chain owns a counter-based Philox stream
keyed by (seed, chain index), so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fmath as fm
from .diagnostics import PosteriorSamples, summarize

__all__ = ["SamplerConfig", "gradient", "value_and_grad", "hmc_run", "SamplerError"]

MAX_ENERGY_ERROR = 1000.0  # divergence threshold on the Hamiltonian error


class SamplerError(RuntimeError):
    pass


class GradientError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup_iters: int = 1000
    sample_iters: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_jitter: float = 2.0
    init: str = "jitter"  # "jitter" (overdispersed) or "map" (mode + jitter)

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("need at least 2 chains")
        if self.sample_iters < 100 and self.sample_iters != 0:
            raise ValueError("sample_iters must be >= 100 (or 0 for a dry run)")
        if not (0.0 < self.target_accept < 1.0):
            raise ValueError("target_accept must be in (0, 1)")
        if self.init not in ("jitter", "map"):
            raise ValueError("init must be 'jitter' or 'map'")


def value_and_grad(logp, point):
    """Log-density and exact gradient at a point.

    Targets are differentiated by forward-mode duals unless they advertise
    ``dual_capable = False``, in which case central finite differences with
    step 1e-6 * (1 + |x|) are used.
    """
    point = np.asarray(point, dtype=float)
    if getattr(logp, "dual_capable", True):
        out = logp(fm.seed(point))
        if isinstance(out, fm.Dual):
            return float(out.val), np.asarray(out.jac, dtype=float).reshape(point.size)
        return float(out), np.zeros(point.size)  # constant regions (e.g. out of bounds)
    f0 = float(logp(point))
    grad = np.empty(point.size)
    for i in range(point.size):
        h = 1e-6 * (1.0 + abs(point[i]))
        up, dn = point.copy(), point.copy()
        up[i] += h
        dn[i] -= h
        grad[i] = (float(logp(up)) - float(logp(dn))) / (2.0 * h)
    return f0, grad


def gradient(logp, point):
    """Gradient of a log-density target; errors on non-finite components."""
    val, grad = value_and_grad(logp, point)
    if np.isfinite(val) and not np.all(np.isfinite(grad)):
        bad = int(np.where(~np.isfinite(grad))[0][0])
        raise GradientError(f"non-finite gradient at coordinate {bad}")
    return grad


class _Metric:
    """Euclidean metric for the kinetic energy.

    ``sigma`` estimates the posterior covariance, diagonal (1-d array) or
    dense (2-d).  Momenta are drawn from N(0, sigma^{-1}) so the velocity
    term sigma @ r carries the leapfrog across correlated ridges.
    """

    def __init__(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        self.diag = sigma.ndim == 1
        self.sigma = sigma
        # raises LinAlgError on a non-PD estimate; callers fall back to diag
        self._chol = None if self.diag else np.linalg.cholesky(sigma)

    def sample_momentum(self, rng, dim):
        z = rng.standard_normal(dim)
        if self.diag:
            return z / np.sqrt(self.sigma)
        from scipy.linalg import solve_triangular

        return solve_triangular(self._chol.T, z, lower=False)

    def velocity(self, r):
        return self.sigma * r if self.diag else self.sigma @ r

    def kinetic(self, r):
        return 0.5 * float(np.dot(r, self.velocity(r)))


def _find_initial_step(logp, position, metric, rng):
    """Double/halve the step until the one-step acceptance crosses 1/2."""
    eps = 1.0
    lp0, g0 = value_and_grad(logp, position)
    r0 = metric.sample_momentum(rng, position.size)
    h0 = lp0 - metric.kinetic(r0)

    def one_step(e):
        q, r, _, lp, _ = _leapfrog(logp, position, r0, g0, e, metric)
        return lp - metric.kinetic(r)

    h1 = one_step(eps)
    direction = 1.0 if (h1 - h0) > math.log(0.5) else -1.0
    for _ in range(60):
        eps *= 2.0**direction
        h1 = one_step(eps)
        if direction * (h1 - h0) <= direction * math.log(0.5):
            break
    return eps


def _leapfrog(logp, q, r, grad, eps, metric):
    r = r + 0.5 * eps * grad
    q = q + eps * metric.velocity(r)
    lp, grad = value_and_grad(logp, q)
    r = r + 0.5 * eps * grad
    return q, r, grad, lp, -np.inf if not np.isfinite(lp) else lp


class _Tree:
    """State of one side of a doubling trajectory."""

    __slots__ = (
        "q_minus", "r_minus", "g_minus", "q_plus", "r_plus", "g_plus",
        "q_prop", "h_prop", "n", "stop", "sum_accept", "n_accept",
    )


def _build_tree(logp, q, r, grad, log_u, direction, depth, eps, metric, h0, rng):
    """Recursively double the trajectory; slice-sampling variant of NUTS."""
    if depth == 0:
        q1, r1, g1, lp1, _ = _leapfrog(logp, q, r, grad, direction * eps, metric)
        h1 = lp1 - metric.kinetic(r1)
        t = _Tree()
        t.q_minus = t.q_plus = t.q_prop = q1
        t.r_minus = t.r_plus = r1
        t.g_minus = t.g_plus = g1
        t.n = 1 if log_u <= h1 else 0
        diverged = (h1 - h0) < -MAX_ENERGY_ERROR or not np.isfinite(h1)
        t.stop = diverged
        t.sum_accept = min(1.0, math.exp(min(0.0, h1 - h0)))
        t.n_accept = 1
        t.h_prop = h1
        return t, diverged

    t, diverged = _build_tree(logp, q, r, grad, log_u, direction, depth - 1, eps, metric, h0, rng)
    if not t.stop:
        if direction == -1:
            t2, div2 = _build_tree(
                logp, t.q_minus, t.r_minus, t.g_minus, log_u, direction, depth - 1, eps, metric, h0, rng
            )
            t.q_minus, t.r_minus, t.g_minus = t2.q_minus, t2.r_minus, t2.g_minus
        else:
            t2, div2 = _build_tree(
                logp, t.q_plus, t.r_plus, t.g_plus, log_u, direction, depth - 1, eps, metric, h0, rng
            )
            t.q_plus, t.r_plus, t.g_plus = t2.q_plus, t2.r_plus, t2.g_plus
        if t2.n > 0 and rng.random() < t2.n / max(t.n + t2.n, 1):
            t.q_prop = t2.q_prop
            t.h_prop = t2.h_prop
        t.sum_accept += t2.sum_accept
        t.n_accept += t2.n_accept
        t.n += t2.n
        t.stop = t2.stop or _u_turn(t.q_minus, t.q_plus, t.r_minus, t.r_plus, metric)
        diverged = diverged or div2
    return t, diverged


def _u_turn(q_minus, q_plus, r_minus, r_plus, metric):
    dq = q_plus - q_minus
    return (np.dot(dq, metric.velocity(r_minus)) < 0.0) or (
        np.dot(dq, metric.velocity(r_plus)) < 0.0
    )


# dense covariance estimation is only worthwhile (and well conditioned) for
# low-dimensional targets with enough draws in the window
DENSE_MASS_MAX_DIM = 40


def _estimate_metric(window, current: _Metric):
    """New metric from a warmup window, or None if the window is too short.

    Dense when the window supports it, otherwise diagonal.  The window
    estimate is blended with the current metric: window draws are serially
    correlated, so a short window alone would wreck a good starting metric
    (such as the curvature estimate used with mode initialization).
    """
    m, dim = window.shape
    if m < 5:
        return None
    # crude effective-sample discount for autocorrelation
    weight = m / (m + 3.0 * dim + 20.0)
    old = np.diag(current.sigma) if not current.diag else current.sigma
    var = window.var(axis=0, ddof=1)
    var = np.where((var > 1e-12) & np.isfinite(var), var, old)
    if dim <= DENSE_MASS_MAX_DIM and m >= dim + 5:
        s = np.atleast_2d(np.cov(window, rowvar=False))
        old_sigma = current.sigma if not current.diag else np.diag(current.sigma)
        sigma = weight * s + (1.0 - weight) * old_sigma + 1e-8 * np.eye(dim)
        if np.all(np.isfinite(sigma)):
            try:
                return _Metric(sigma)
            except np.linalg.LinAlgError:
                pass
    new_var = weight * var + (1.0 - weight) * old
    return _Metric(new_var)


def _adaptation_windows(warmup_iters: int):
    """End indices of the expanding mass-estimation windows.

    Mirrors the usual windowed scheme: an initial step-size-only buffer,
    doubling covariance windows, and a final step-size-only buffer.  Short
    warmups (< 40 iterations) get a single late window.
    """
    if warmup_iters < 40:
        return [max(1, warmup_iters // 2)] if warmup_iters > 1 else []
    first = max(2, int(0.1 * warmup_iters))
    last = int(0.9 * warmup_iters)
    ends = []
    start, width = first, max(10, int(0.15 * warmup_iters))
    while start < last:
        end = min(start + width, last)
        # absorb a too-small trailing window into the previous one
        if last - end < 10:
            end = last
        ends.append(end)
        start, width = end, 2 * width
    return ends


def _run_chain(logp, dim, config: SamplerConfig, chain_index: int,
               q0=None, inv_mass0=None):
    rng = np.random.Generator(
        np.random.Philox(key=(np.uint64(config.seed) << np.uint64(16)) + np.uint64(chain_index))
    )

    def draw_start():
        if q0 is not None:
            sd = np.sqrt(inv_mass0 if inv_mass0.ndim == 1 else np.diag(inv_mass0))
            return q0 + rng.standard_normal(dim) * sd
        return rng.uniform(-config.init_jitter, config.init_jitter, dim)

    q = draw_start()
    lp, grad = value_and_grad(logp, q)
    tries = 0
    while not np.isfinite(lp):
        q = draw_start()
        lp, grad = value_and_grad(logp, q)
        tries += 1
        if tries > 100:
            raise SamplerError("could not find a finite starting point")

    metric = _Metric(np.ones(dim) if inv_mass0 is None else inv_mass0.copy())
    eps = _find_initial_step(logp, q, metric, rng)
    mu = math.log(10.0 * eps)
    log_eps_bar, h_bar = 0.0, 0.0
    adapt_iter = 0
    window_start = 0
    windows = _adaptation_windows(config.warmup_iters)
    gamma, t0, kappa = 0.05, 10.0, 0.75

    warm_draws = np.empty((config.warmup_iters, dim))
    draws = np.empty((config.sample_iters, dim))
    n_div = 0
    energy_errors = []

    total_iters = config.warmup_iters + config.sample_iters
    for it in range(total_iters):
        warming = it < config.warmup_iters
        r0 = metric.sample_momentum(rng, dim)
        h0 = lp - metric.kinetic(r0)
        log_u = h0 + math.log(max(rng.random(), 1e-300))

        t = _Tree()
        t.q_minus = t.q_plus = t.q_prop = q
        t.r_minus = t.r_plus = r0
        t.g_minus = t.g_plus = grad
        t.n, t.stop = 1, False
        t.h_prop = h0
        sum_accept, n_accept = 0.0, 0
        diverged = False
        depth = 0
        while not t.stop and depth < config.max_tree_depth:
            direction = -1 if rng.random() < 0.5 else 1
            if direction == -1:
                t2, div = _build_tree(
                    logp, t.q_minus, t.r_minus, t.g_minus, log_u, direction, depth, eps, metric, h0, rng
                )
                t.q_minus, t.r_minus, t.g_minus = t2.q_minus, t2.r_minus, t2.g_minus
            else:
                t2, div = _build_tree(
                    logp, t.q_plus, t.r_plus, t.g_plus, log_u, direction, depth, eps, metric, h0, rng
                )
                t.q_plus, t.r_plus, t.g_plus = t2.q_plus, t2.r_plus, t2.g_plus
            diverged = diverged or div
            sum_accept += t2.sum_accept
            n_accept += t2.n_accept
            if not t2.stop and t2.n > 0 and rng.random() < min(1.0, t2.n / max(t.n, 1)):
                t.q_prop = t2.q_prop
                t.h_prop = t2.h_prop
            t.n += t2.n
            t.stop = t2.stop or _u_turn(t.q_minus, t.q_plus, t.r_minus, t.r_plus, metric)
            depth += 1

        if not np.array_equal(t.q_prop, q):
            q = t.q_prop
            lp, grad = value_and_grad(logp, q)
        accept_stat = sum_accept / max(n_accept, 1)
        if diverged and not warming:
            n_div += 1
        if not warming:
            # Hamiltonian error at the accepted state of the trajectory
            energy_errors.append(t.h_prop - h0)

        if warming:
            adapt_iter += 1
            frac = 1.0 / (adapt_iter + t0)
            h_bar = (1.0 - frac) * h_bar + frac * (config.target_accept - accept_stat)
            log_eps = mu - math.sqrt(adapt_iter) / gamma * h_bar
            weight = adapt_iter**-kappa
            log_eps_bar = weight * log_eps + (1.0 - weight) * log_eps_bar
            eps = math.exp(log_eps)
            warm_draws[it] = q
            if it + 1 in windows:
                # re-estimate the mass from this window, then restart
                # step-size adaptation against the new metric
                window = warm_draws[window_start : it + 1]
                updated = _estimate_metric(window, metric)
                if updated is not None:
                    metric = updated
                window_start = it + 1
                eps = _find_initial_step(logp, q, metric, rng)
                mu = math.log(10.0 * eps)
                log_eps_bar, h_bar = 0.0, 0.0
                adapt_iter = 0
            if it == config.warmup_iters - 1:
                eps = math.exp(log_eps_bar) if adapt_iter else eps
        else:
            draws[it - config.warmup_iters] = q

    if config.warmup_iters > 0 and config.sample_iters > 0 and n_div == config.sample_iters:
        raise SamplerError("all post-warmup trajectories diverged")
    return draws, n_div, np.array(energy_errors)


def _mode_and_curvature(logp, dim):
    """Posterior mode and a diagonal variance estimate from its curvature.

    Used to seed chains near the typical set with a sensible starting mass.
    Falls back to the origin and unit mass if optimization fails.
    """
    from scipy.optimize import minimize

    def neg(v):
        lp, g = value_and_grad(logp, v)
        return -lp, -g

    res = minimize(neg, np.zeros(dim), jac=True, method="L-BFGS-B")
    if not np.all(np.isfinite(res.x)):
        return np.zeros(dim), np.ones(dim)
    q0 = res.x
    h = 1e-4
    hess = np.zeros((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = h
        _, gp = value_and_grad(logp, q0 + e)
        _, gm = value_and_grad(logp, q0 - e)
        hess[i] = -(gp - gm) / (2.0 * h)
    hess = 0.5 * (hess + hess.T)
    var = np.ones(dim)
    diag = np.diag(hess)
    good = np.isfinite(diag) & (diag > 1e-8)
    var[good] = 1.0 / diag[good]
    if dim <= DENSE_MASS_MAX_DIM and np.all(np.isfinite(hess)):
        try:
            sigma = np.linalg.inv(hess)
            # full curvature-based covariance when positive definite
            np.linalg.cholesky(sigma)
            return q0, sigma
        except np.linalg.LinAlgError:
            pass
    return q0, var


def hmc_run(logp, config: SamplerConfig, dim: int, names: list[str] | None = None) -> PosteriorSamples:
    """Run multi-chain NUTS on a log-density over R^dim.

    Returns draws of shape (chains, sample_iters, dim) with summaries.  Runs
    flagged unreliable (more than 10% divergent transitions) are returned,
    not raised.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    names = names or [f"theta[{i}]" for i in range(dim)]
    q0 = inv_mass0 = None
    if config.init == "map":
        q0, inv_mass0 = _mode_and_curvature(logp, dim)
    all_draws = np.empty((config.chains, config.sample_iters, dim))
    total_div = 0
    energy = []
    for c in range(config.chains):
        draws, n_div, e = _run_chain(logp, dim, config, c, q0, inv_mass0)
        all_draws[c] = draws
        total_div += n_div
        energy.append(e)
    div_frac = total_div / max(config.chains * config.sample_iters, 1)
    summ = summarize(all_draws, names) if config.sample_iters > 0 else None
    return PosteriorSamples(
        draws=all_draws,
        names=list(names),
        summaries=summ,
        divergence_fraction=div_frac,
        reliable=div_frac <= 0.10,
        energy_errors=np.concatenate(energy) if energy else np.empty(0),
    )
