"""Run configuration: an INI-style text format with typed sections.

Grammar: ``[section]`` headers followed by ``key = value`` lines; ``#`` and
``;`` start comments; blank lines ignored.  Unknown sections or keys are
errors, not warnings.  Scalar draws are written either as a bare number
(fixed) or ``normal(mean, sd)`` (drawn once per dataset).

Sections and keys:

  [data]      family, n, d, alpha, scale, beta_y_intercept,
              beta_delta_intercept, expertise_dims, expertise_fraction,
              interactions, fixed, csv
  [constraints]  prevalence_target, prevalence_weight, expertise
  [sampler]   chains, warmup, samples, target_accept, max_tree_depth
  [experiment]   trials
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

from .model import ConfigurationError
from .sampler import SamplerConfig
from .synthgen import GenConfig

__all__ = ["RunConfig", "parse_config", "load_config"]

_ALLOWED = {
    "data": {
        "family", "n", "d", "alpha", "scale", "beta_y_intercept",
        "beta_delta_intercept", "expertise_dims", "expertise_fraction",
        "interactions", "fixed", "csv",
    },
    "constraints": {"prevalence_target", "prevalence_weight", "expertise"},
    "sampler": {"chains", "warmup", "samples", "target_accept", "max_tree_depth", "init"},
    "experiment": {"trials"},
}

_NORMAL_RE = re.compile(r"^normal\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$")


def _parse_spec(text: str):
    m = _NORMAL_RE.match(text)
    if m:
        return (float(m.group(1)), float(m.group(2)))
    try:
        return float(text)
    except ValueError:
        raise ConfigurationError(
            f"bad value spec {text!r}: expected a number or normal(mean, sd)"
        ) from None


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("true", "yes", "1"):
        return True
    if t in ("false", "no", "0"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    """Parsed configuration plus the command-line execution knobs."""

    raw: dict
    seed: int = 0
    workers: int = 1
    trials: int = 50

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigurationError("trial count must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("worker count must be >= 1")

    @property
    def data(self) -> dict:
        return self.raw.get("data", {})

    @property
    def constraints(self) -> dict:
        return self.raw.get("constraints", {})

    def gen_config(self, seed: int | None = None) -> GenConfig:
        d = self.data
        if "family" not in d:
            raise ConfigurationError("[data] family is required")
        kwargs = dict(
            family=d["family"],
            n=int(d.get("n", 5000)),
            d=int(d.get("d", 5)),
            seed=self.seed if seed is None else seed,
        )
        if "alpha" in d:
            kwargs["alpha_spec"] = _parse_spec(d["alpha"])
        if "scale" in d:
            kwargs["scale_spec"] = _parse_spec(d["scale"])
        if "beta_y_intercept" in d:
            kwargs["beta_y_intercept_spec"] = _parse_spec(d["beta_y_intercept"])
        if "beta_delta_intercept" in d:
            kwargs["beta_delta_intercept_spec"] = _parse_spec(d["beta_delta_intercept"])
        if d.get("expertise_dims", "").strip():
            kwargs["expertise_dims"] = tuple(
                int(tok) for tok in d["expertise_dims"].split(",")
            )
        if d.get("expertise_fraction", "").strip():
            kwargs["expertise_fraction"] = float(d["expertise_fraction"])
        if "interactions" in d:
            kwargs["interactions"] = _parse_bool(d["interactions"])
        if "fixed" in d:
            if d["fixed"] not in ("alpha", "scale"):
                raise ConfigurationError("[data] fixed must be alpha or scale")
            kwargs["fixed_flag"] = d["fixed"] + "_fixed"
        return GenConfig(**kwargs)

    def sampler_config(self, seed: int | None = None) -> SamplerConfig:
        s = self.raw.get("sampler", {})
        return SamplerConfig(
            chains=int(s.get("chains", 2)),
            warmup_iters=int(s.get("warmup", 300)),
            sample_iters=int(s.get("samples", 500)),
            target_accept=float(s.get("target_accept", 0.8)),
            max_tree_depth=int(s.get("max_tree_depth", 10)),
            seed=self.seed if seed is None else seed,
            init=s.get("init", "map"),
        )

    def prevalence_weight(self) -> float:
        return float(self.constraints.get("prevalence_weight", 1e4))

    def prevalence_target(self):
        t = self.constraints.get("prevalence_target")
        return None if t is None else float(t)

    def use_expertise(self) -> bool:
        return _parse_bool(self.constraints.get("expertise", "true"))


def parse_config(text: str, seed: int = 0, workers: int = 1, trials: int | None = None) -> RunConfig:
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";")
    )
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigurationError(f"malformed config: {err}") from err
    raw: dict = {}
    for section in parser.sections():
        if section not in _ALLOWED:
            raise ConfigurationError(f"unknown config section [{section}]")
        raw[section] = {}
        for key, value in parser.items(section):
            if key not in _ALLOWED[section]:
                raise ConfigurationError(f"unknown key {key!r} in section [{section}]")
            raw[section][key] = value
    if trials is None:
        trials = int(raw.get("experiment", {}).get("trials", 50))
    return RunConfig(raw=raw, seed=seed, workers=workers, trials=trials)


def load_config(path, seed: int = 0, workers: int = 1, trials: int | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), seed=seed, workers=workers, trials=trials)
