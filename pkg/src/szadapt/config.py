"""Run configuration: defaults, ``key = value`` files and validation.

A config file has one section per stage::

    # comments start with '#'
    [cohort]
    n_subjects = 6
    [adaptation]
    latent_dim = 64
    disc_hidden = 512, 128
    [eval]
    ns = 0, 1, 2, 3
    schemes = SS, CS

Keys left out keep their defaults.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .adaptation import AdaptationConfig
from .embed import TsneConfig
from .errors import ConfigError
from .evaluation import SCHEMES
from .gbtree import GbtConfig
from .signals import CohortConfig

THREADS_ENV = "SZAD_THREADS"


@dataclass(frozen=True)
class EvalConfig:
    ns: tuple = (0, 1, 2, 3)
    schemes: tuple = ("SS", "CS")
    trials: int = 5
    source_weight: float = 0.01
    target_weight: float = 1.0
    window_seconds: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "schemes", tuple(str(s) for s in self.schemes))
        if not self.ns or min(self.ns) < 0:
            raise ConfigError(f"ns must be non-negative integers, got {self.ns}", "ns")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}; choose from {SCHEMES}", "schemes")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1", "trials")
        if not (self.source_weight > 0 and self.target_weight > 0):
            raise ConfigError("sample weights must be positive", "source_weight")
        if not self.window_seconds > 0:
            raise ConfigError("window_seconds must be positive", "window_seconds")


SECTIONS = {
    "cohort": CohortConfig,
    "adaptation": AdaptationConfig,
    "gbt": GbtConfig,
    "tsne": TsneConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    cohort: CohortConfig = field(default_factory=CohortConfig)
    adaptation: AdaptationConfig = field(default_factory=AdaptationConfig)
    gbt: GbtConfig = field(default_factory=GbtConfig)
    tsne: TsneConfig = field(default_factory=TsneConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    threads: int = 1

    def validate(self):
        """Cross-section checks, run before any work starts."""
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}", "threads")
        if self.adaptation.n_subjects != self.cohort.n_subjects:
            raise ConfigError(
                f"adaptation.n_subjects={self.adaptation.n_subjects} but the cohort has "
                f"{self.cohort.n_subjects} subjects", "adaptation.n_subjects")
        if max(self.eval.ns) >= self.cohort.blocks_per_subject:
            raise ConfigError(
                f"eval.ns reaches {max(self.eval.ns)} but subjects have only "
                f"{self.cohort.blocks_per_subject} blocks", "eval.ns")
        return self

    def with_seed(self, seed):
        """Thread one seed into every stochastic stage."""
        seed = int(seed)
        return replace(self, seed=seed,
                       cohort=replace(self.cohort, seed=seed),
                       adaptation=replace(self.adaptation, seed=seed),
                       tsne=replace(self.tsne, seed=seed))

    def trial_seeds(self):
        seq = np.random.SeedSequence(self.seed)
        return [int(s) for s in seq.generate_state(self.eval.trials, dtype=np.uint32)]

    def lines(self):
        """Fully resolved configuration in the file syntax."""
        out = [f"seed = {self.seed}", f"threads = {self.threads}"]
        for name in SECTIONS:
            out.append(f"[{name}]")
            section = getattr(self, name)
            for f in fields(section):
                out.append(f"{f.name} = {_format(getattr(section, f.name))}")
        return out


def _format(value):
    if isinstance(value, (tuple, list)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(raw, default, key):
    kind = type(default)
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        if default is None or isinstance(default, float):
            return None if raw.lower() == "none" else float(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"cannot read {key} = {raw!r} as {kind.__name__}", key) from None


def parse_config_text(text, source="<config>"):
    """Parse ``key = value`` text into ``{section: {key: raw string}}``."""
    out = {"": {}}
    section = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in SECTIONS:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]", section)
            out.setdefault(section, {})
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'", None)
        key, value = (s.strip() for s in line.split("=", 1))
        out[section][key] = value
    return out


def build_config(raw, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    top = dict(raw.get("", {}))
    updates = {}
    for key in list(top):
        if key not in ("seed", "threads"):
            raise ConfigError(f"unknown top-level key {key!r}", key)
        updates[key] = _convert(top[key], 0, key)
    for name, cls in SECTIONS.items():
        section = getattr(base, name)
        values = raw.get(name, {})
        known = {f.name for f in fields(cls)}
        changes = {}
        for key, value in values.items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in section [{name}]", f"{name}.{key}")
            changes[key] = _convert(value, getattr(section, key), f"{name}.{key}")
        if changes:
            updates[name] = replace(section, **changes)
    cfg = replace(base, **updates)
    if "n_subjects" not in raw.get("adaptation", {}):
        cfg = replace(cfg, adaptation=replace(cfg.adaptation,
                                              n_subjects=cfg.cohort.n_subjects))
    if "seed" in top:
        cfg = cfg.with_seed(cfg.seed)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}", "config") from None
    return build_config(parse_config_text(text, str(path)))


def threads_from_env(default=1):
    raw = os.environ.get(THREADS_ENV)
    if raw is None or raw == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer", THREADS_ENV) from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1", THREADS_ENV)
    return n

