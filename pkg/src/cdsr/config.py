"""Training configuration and flat key-value config files (TOML subset)."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

VARIANTS = ("full", "no_infomax", "no_gnn", "cross_only")

L2_GRID = (1e-4, 5e-5, 1e-5)
LR_GRID = (1e-3, 5e-4, 1e-4)
LAMBDA_GRID = tuple(round(0.1 * k, 1) for k in range(1, 10))
LAYER_GRID = (0, 1, 2, 3, 4)

_ALIASES = {"lambda": "lam", "L": "n_layers", "d": "dim", "M": "max_len", "batch": "batch_size"}


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dim: int = 256
    batch_size: int = 256
    dropout: float = 0.3
    l2: float = 5e-5
    lr: float = 1e-3
    epochs: int = 100
    lam: float = 0.7
    n_layers: int = 1
    max_len: int | None = None  # None: take the corpus max length
    seed: int = 0
    variant: str = "full"
    n_blocks: int = 2
    activation: str = "relu"
    norm_placement: str = "sasrec"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    eval_every: int = 1
    eval_negatives: int = 999
    eval_batch_size: int = 512
    corruptions: int = 1
    overrides_ok: bool = field(default=False, repr=False)

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.lam == 1.0 and self.variant != "no_infomax":
            raise ConfigError("lambda = 1 disables the infomax objective; use variant = no_infomax")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be >= 0")
        if self.n_blocks < 1 or self.dim < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("dim, batch_size and n_blocks must be positive, epochs non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.corruptions != 1:
            raise ConfigError("only one corrupted sequence per true sequence is supported")
        for name, value, grid in (
            ("l2", self.l2, L2_GRID),
            ("lr", self.lr, LR_GRID),
            ("lam", self.lam, LAMBDA_GRID + (1.0,)),
            ("n_layers", self.n_layers, LAYER_GRID),
        ):
            if not any(abs(value - g) < 1e-12 for g in grid) and not self.overrides_ok:
                log.warning("%s=%s is outside the reference grid %s", name, value, grid)
        return self

    def effective(self) -> "TrainConfig":
        """Apply the variant's forced settings."""
        cfg = dataclasses.replace(self)
        if cfg.variant == "no_infomax":
            cfg.lam = 1.0
        elif cfg.variant == "no_gnn":
            cfg.n_layers = 0
        return cfg.validate()

    @property
    def uses_infomax(self) -> bool:
        return self.variant in ("full", "no_gnn") and self.lam < 1.0

    @property
    def uses_single(self) -> bool:
        return self.variant != "cross_only"

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("overrides_ok")
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in values.items():
            key = _ALIASES.get(key, key)
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = value
        return cls(**kwargs)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def read_kv_file(path) -> dict:
    """Flat ``key = value`` file; nested tables are rejected."""
    path = Path(path)
    try:
        values = tomllib.loads(path.read_text(encoding="utf-8"))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    if nested:
        raise ConfigError(f"{path}: config must be flat, found tables {nested}")
    return values


def parse_override(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as a TOML scalar (bare words become strings)."""
    key, sep, raw = text.partition("=")
    if not sep:
        raise ConfigError(f"override {text!r} is not key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip(), value


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    values = read_kv_file(path) if path else {}
    values.update(overrides or {})
    return TrainConfig.from_dict(values).validate()
