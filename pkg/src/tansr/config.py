"""Flat ``key = value`` run configuration covering model and training settings."""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def _field_types(cls) -> dict:
    defaults = cls()
    return {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}


MODEL_KEYS = _field_types(ModelConfig)
TRAIN_KEYS = _field_types(TrainConfig)


def parse_pairs(lines) -> dict[str, str]:
    """``key=value`` lines, ``#`` comments and blank lines ignored."""
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "RunConfig":
        model_kw, train_kw = {}, {}
        for key, raw in pairs.items():
            if key in MODEL_KEYS:
                model_kw[key] = _coerce(key, raw, MODEL_KEYS[key])
            elif key in TRAIN_KEYS:
                train_kw[key] = _coerce(key, raw, TRAIN_KEYS[key])
            else:
                raise ConfigError(f"unknown config key: {key}")
        return cls(ModelConfig(**model_kw), TrainConfig(**train_kw))

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        pairs = {}
        if path is not None:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"cannot read config file {path}: {exc}") from exc
            pairs.update(parse_pairs(text.splitlines()))
        pairs.update(parse_pairs(overrides))
        return cls.from_pairs(pairs)

    def as_dict(self) -> dict:
        return {**self.model.as_dict(), **self.train.as_dict()}

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.as_dict().items())
