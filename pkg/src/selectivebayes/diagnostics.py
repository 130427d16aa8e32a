"""Posterior draw containers and convergence diagnostics.

Split R-hat and bulk effective sample size follow the standard
rank-normalized, split-chain definitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

__all__ = ["ParameterSummary", "PosteriorSamples", "summarize", "split_rhat", "bulk_ess"]


class DiagnosticsError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterSummary:
    name: str
    mean: float
    sd: float
    q2_5: float
    q97_5: float
    rhat: float
    ess_bulk: float

    @property
    def ci_width(self) -> float:
        return self.q97_5 - self.q2_5


@dataclass(frozen=True)
class PosteriorSamples:
    """Multi-chain posterior draws plus per-parameter summaries."""

    draws: np.ndarray  # (chains, iters, p)
    names: list[str]
    summaries: list[ParameterSummary] | None
    divergence_fraction: float = 0.0
    reliable: bool = True
    energy_errors: np.ndarray | None = None

    def __getitem__(self, name: str) -> ParameterSummary:
        if self.summaries is None:
            raise DiagnosticsError("no summaries: run had zero sampling iterations")
        for s in self.summaries:
            if s.name == name:
                return s
        raise KeyError(name)

    def flat(self, name: str) -> np.ndarray:
        j = self.names.index(name)
        return self.draws[:, :, j].reshape(-1)

    def flat_all(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]


def _split_chains(x: np.ndarray) -> np.ndarray:
    """(chains, iters) -> (2*chains, iters//2), dropping an odd tail draw."""
    c, n = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, half : 2 * half]], axis=0)


def split_rhat(x: np.ndarray) -> float:
    """Split R-hat of one parameter's draws, shape (chains, iters).

    Constant chains are a converged degenerate case and report 1.0.
    """
    z = _split_chains(np.asarray(x, dtype=float))
    m, n = z.shape
    if n < 2:
        raise DiagnosticsError("need at least 4 draws per chain")
    w = z.var(axis=1, ddof=1).mean()
    b = n * z.mean(axis=1).var(ddof=1)
    if w <= 1e-300:
        return 1.0
    return float(np.sqrt((w * (n - 1) / n + b / n) / w))


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    flat = x.reshape(-1)
    ranks = stats.rankdata(flat, method="average")
    q = (ranks - 0.375) / (flat.size + 0.25)
    return stats.norm.ppf(q).reshape(x.shape)


def bulk_ess(x: np.ndarray) -> float:
    """Rank-normalized split-chain bulk effective sample size."""
    z = _split_chains(np.asarray(x, dtype=float))
    if z.std() <= 1e-300:
        return float(z.size)
    z = _rank_normalize(z)
    m, n = z.shape
    means = z.mean(axis=1, keepdims=True)
    centered = z - means
    # per-chain autocovariance via FFT
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, nfft, axis=1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=1)[:, :n].real / n
    w = z.var(axis=1, ddof=1).mean()
    b = z.mean(axis=1).var(ddof=1)
    var_plus = w * (n - 1) / n + b
    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    # Geyer initial monotone positive sequence on paired sums
    pair = rho[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    tau = 0.0
    prev = np.inf
    for p in pair:
        if p < 0:
            break
        p = min(p, prev)
        prev = p
        tau += p
    tau = max(2.0 * tau - 1.0, 1.0 / np.log10(max(z.size, 10)))
    return float(min(z.size / tau, float(z.size)))


def summarize(draws: np.ndarray, names: list[str]) -> list[ParameterSummary]:
    """Per-parameter mean, sd, central 95% interval, split R-hat, bulk ESS.

    Requires at least 2 chains of at least 100 draws each; NaNs are an error.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3:
        raise DiagnosticsError("draws must have shape (chains, iters, p)")
    c, n, p = draws.shape
    if c < 2 or n < 100:
        raise DiagnosticsError("need >= 2 chains with >= 100 draws each")
    if np.isnan(draws).any():
        raise DiagnosticsError("NaN draws")
    if len(names) != p:
        raise DiagnosticsError("names length mismatch")
    out = []
    for j in range(p):
        x = draws[:, :, j]
        flat = x.reshape(-1)
        lo, hi = np.quantile(flat, [0.025, 0.975])
        out.append(
            ParameterSummary(
                name=names[j],
                mean=float(flat.mean()),
                sd=float(flat.std(ddof=1)),
                q2_5=float(lo),
                q97_5=float(hi),
                rhat=split_rhat(x),
                ess_bulk=bulk_ess(x),
            )
        )
    return out
