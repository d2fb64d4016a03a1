"""Training configuration and its flat ``key = value`` file format.

Keys in files and on the command line are the camelCase forms of the field
names (``learning_rate`` -> ``learningRate``), so one dataclass drives both.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Mapping

from spantagger.corpus import TASKS
from spantagger.depgraph import MODES
from spantagger.errors import ConfigError

VARIANTS = ("rgat", "rgat-crf", "rgat-bilstm-crf", "rgat-trfmr-crf")
ENCODERS = ("lookup", "sidecar")
SEED_ENV = "SPANTAGGER_SEED"


def camel(name: str) -> str:
    head, *rest = name.split("_")
    return head + "".join(part.capitalize() for part in rest)


@dataclass(frozen=True)
class TrainConfig:
    variant: str = "rgat-bilstm-crf"
    task: str = "aspect"
    epochs: int = 30
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    dropout: float = 0.3
    dropout_layers: bool = True
    dropout_relations: bool = True
    rel_dim: int = 200
    rel_mlp_dim: int = 64
    tok_dim: int = 100
    pos_dim: int = 30
    hidden: int = 128
    layers: int = 2
    att_heads: int = 4
    rel_heads: int = 4
    trf_heads: int = 4
    seed: int = 13
    reorient_mode: str = "star"
    encoder_source: str = "lookup"
    sidecar: str = ""
    bieos_mask: bool = False
    freeze_pivots: bool = False
    grad_accum: int = 1
    early_stop_f1: float = 0.0

    @property
    def uses_crf(self) -> bool:
        return self.variant != "rgat"

    @property
    def head(self) -> str:
        """Sequence layer between the R-GAT stack and the output projection."""
        if self.variant == "rgat-bilstm-crf":
            return "bilstm"
        if self.variant == "rgat-trfmr-crf":
            return "transformer"
        return "linear"

    def validate(self) -> "TrainConfig":
        def bad(name, msg):
            raise ConfigError(f"{camel(name)}: {msg}", key=camel(name))

        if self.variant not in VARIANTS:
            bad("variant", f"must be one of {VARIANTS}, got {self.variant!r}")
        if self.task not in TASKS:
            bad("task", f"must be one of {TASKS}, got {self.task!r}")
        if self.reorient_mode not in MODES:
            bad("reorient_mode", f"must be one of {MODES}, got {self.reorient_mode!r}")
        if self.encoder_source not in ENCODERS:
            bad("encoder_source", f"must be one of {ENCODERS}, got {self.encoder_source!r}")
        if not 0.0 <= self.dropout < 1.0:
            bad("dropout", f"must lie in [0, 1), got {self.dropout}")
        if self.epochs < 1:
            bad("epochs", f"must be at least 1, got {self.epochs}")
        for name in ("rel_dim", "rel_mlp_dim", "hidden", "layers", "att_heads",
                     "rel_heads", "trf_heads", "grad_accum"):
            if getattr(self, name) < 1:
                bad(name, "must be positive")
        if self.encoder_source == "lookup":
            for name in ("tok_dim", "pos_dim"):
                if getattr(self, name) < 1:
                    bad(name, "must be positive")
        if self.hidden % self.att_heads:
            bad("att_heads", f"must divide hidden={self.hidden}")
        if self.hidden % self.rel_heads:
            bad("rel_heads", f"must divide hidden={self.hidden}")
        if self.hidden // self.att_heads != self.hidden // self.rel_heads:
            bad("rel_heads", "attention and relational heads must have equal width")
        if self.head == "bilstm" and self.hidden % 2:
            bad("hidden", "must be even for the BiLSTM head")
        if self.head == "transformer" and self.hidden % self.trf_heads:
            bad("trf_heads", f"must divide hidden={self.hidden}")
        if not 0 < self.learning_rate:
            bad("learning_rate", "must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            bad("adam_beta1", "betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            bad("adam_eps", "must be positive")
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float):
                value = repr(value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{camel(f.name)} = {value}")
        return "\n".join(lines) + "\n"

    def updated(self, overrides: Mapping[str, str]) -> "TrainConfig":
        """Apply string overrides keyed by camelCase names; values are parsed per field type."""
        known = {camel(f.name): f for f in fields(self)}
        changes = {}
        for key, raw in overrides.items():
            f = known.get(key)
            if f is None:
                raise ConfigError(f"unknown configuration key {key!r}", key=key)
            changes[f.name] = _parse_value(key, raw, type(getattr(self, f.name)))
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return {camel(k): v for k, v in asdict(self).items()}


def _parse_value(key: str, raw: str, kind: type):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}", key=key) from None
    return raw


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | os.PathLike | None = None, overrides: Mapping[str, str] | None = None) -> TrainConfig:
    """Defaults, then file values, then overrides; the seed falls back to SPANTAGGER_SEED."""
    values: dict[str, str] = {}
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    values.update(overrides or {})
    if "seed" not in values and os.environ.get(SEED_ENV):
        values["seed"] = os.environ[SEED_ENV]
    return TrainConfig().updated(values).validate()
