"""Run configuration, flat key=value config files, and layering rules.

Precedence when a run is assembled: built-in defaults, then values from a
config file, then explicit CLI flags (strongest).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .exceptions import ConfigError

ABLATION_FLAGS = frozenset(
    {"no_ce", "no_ema", "no_decouple", "no_soft_assignment", "no_semantic_weights"}
)

ACTIVATIONS = ("identity", "tanh")


@dataclass(frozen=True)
class Config:
    """Hyperparameters and run controls for training and evaluation.

    Attributes
    ----------
    tau : softmax temperature for similarity weights and logits (> 0).
    gamma : weight of the knowledge-transfer regularizer (>= 0).
    alpha : momentum of the exponential-moving-average prototype update,
        in [0, 1]; 1 keeps old prototypes, 0 overwrites them.
    learning_rate : step size of full-batch gradient descent.
    epochs : number of training epochs (0 leaves parameters at init).
    seed : non-negative integer seeding every random stream of the run.
    n_clusters : total category count, or "estimate" to infer it from the
        unlabeled data (requires k_max).
    ablations : subset of ABLATION_FLAGS disabling individual model parts.
    """

    tau: float = 0.07
    gamma: float = 10.0
    alpha: float = 0.9
    learning_rate: float = 0.003
    epochs: int = 30
    seed: int = 0
    n_clusters: int | str = "estimate"
    ablations: frozenset = frozenset()
    activation: str = "identity"
    head_init: str = "identity"
    out_dim: int | None = None
    kmeans_max_iter: int = 300
    kmeans_tol: float = 1e-6
    kmeans_n_init: int = 10
    k_max: int | None = None
    threshold_factor: float = 0.5
    rematch_period: int = 0
    recluster_period: int = 0
    detach_weights: bool = False
    ce_head: str = "prototype"
    per_subset_mapping: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.gamma < 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if int(self.seed) < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        if self.n_clusters != "estimate":
            if not isinstance(self.n_clusters, int) or self.n_clusters < 1:
                raise ConfigError(
                    f"n_clusters must be a positive integer or 'estimate', got {self.n_clusters!r}"
                )
        unknown = set(self.ablations) - ABLATION_FLAGS
        if unknown:
            raise ConfigError(f"unknown ablation flags: {sorted(unknown)}")
        object.__setattr__(self, "ablations", frozenset(self.ablations))
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.head_init not in ("identity", "random"):
            raise ConfigError(f"head_init must be 'identity' or 'random', got {self.head_init!r}")
        if self.k_max is not None and self.k_max < 2:
            raise ConfigError(f"k_max must be >= 2, got {self.k_max}")
        if not 0.0 < self.threshold_factor < 1.0:
            raise ConfigError(
                f"threshold_factor must lie strictly between 0 and 1, got {self.threshold_factor}"
            )
        if self.ce_head not in ("prototype", "linear"):
            raise ConfigError(f"ce_head must be 'prototype' or 'linear', got {self.ce_head!r}")

    def ablated(self, flag: str) -> bool:
        return flag in self.ablations

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_mapping(self) -> dict:
        """Flat string mapping, suitable for config files and manifests."""
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "ablations":
                out[f.name] = ",".join(sorted(v))
            elif v is None:
                out[f.name] = ""
            else:
                out[f.name] = str(v)
        return out


_INT_FIELDS = {"epochs", "seed", "kmeans_max_iter", "kmeans_n_init", "rematch_period", "recluster_period"}
_FLOAT_FIELDS = {"tau", "gamma", "alpha", "learning_rate", "kmeans_tol", "threshold_factor"}
_BOOL_FIELDS = {"detach_weights", "per_subset_mapping"}
_OPT_INT_FIELDS = {"out_dim", "k_max"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
        if key in _BOOL_FIELDS:
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if key in _OPT_INT_FIELDS:
            return None if raw == "" else int(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    if key == "n_clusters":
        if raw == "estimate":
            return "estimate"
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for n_clusters: {raw!r}") from exc
    if key == "ablations":
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        return frozenset(parts)
    return raw


_KEY_ALIASES = {"k": "n_clusters", "lr": "learning_rate"}


def config_from_mapping(mapping: dict, base: Config | None = None) -> Config:
    """Build a Config by overlaying string key=value pairs on ``base``."""
    base = base if base is not None else Config()
    known = {f.name for f in dataclasses.fields(Config)}
    changes = {}
    for key, raw in mapping.items():
        key = _KEY_ALIASES.get(key, key)
        if key not in known:
            raise ConfigError(f"unknown config key: {key!r}")
        changes[key] = _parse_value(key, raw if isinstance(raw, str) else str(raw))
    return base.replace(**changes)


def read_config_file(path) -> dict:
    """Parse a flat key=value text file into a string mapping.

    Blank lines and lines starting with '#' are ignored.
    """
    mapping = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def load_config(path, base: Config | None = None) -> Config:
    """Load a Config from a key=value file, overlaying ``base``."""
    return config_from_mapping(read_config_file(path), base=base)
