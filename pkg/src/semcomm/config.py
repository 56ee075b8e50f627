"""Run configuration: a line-based ``key=value`` file whose keys mirror CLI flags."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .channel.sim import ChannelConfig
from .errors import ConfigError

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class PipelineConfig:
    # paths; empty means "not given"
    image: str = ""
    output: str = "out"
    seg_weights: str = ""
    gan_weights: str = ""
    palette: str = ""
    dataset: str = ""
    # networks
    num_classes: int = 21
    base_channels: int = 16
    gan_base_filters: int = 16
    gan_levels: int = 4
    disc_layers: int = 5
    quantized: bool = False
    # channel
    snr_db: float = 10.0
    noiseless: bool = False
    fading: bool = True
    per_symbol_fading: bool = False
    seed: int = 0
    strict: bool = False
    symbol_log: bool = False
    # latency model; stage times are injected so reports stay reproducible
    bitrate: float = 1e6
    t_seg: float = 0.25
    t_restore: float = 0.25
    # training
    lr_seg: float = 5e-4
    lr_gan: float = 2e-4
    epochs: int = 300
    step_size: int = 100
    gamma: float = 0.5
    batch_size: int = 8
    val_fraction: float = 0.2
    cycle_lambda: float = 10.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, float) and not math.isfinite(value):
                raise ConfigError(f"{f.name} must be finite")
        if not 1 <= self.num_classes <= 255:
            raise ConfigError("num_classes must be in [1, 255]")
        positive = ("base_channels", "gan_base_filters", "gan_levels", "disc_layers", "epochs", "step_size",
                    "batch_size")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("bitrate", "lr_seg", "lr_gan", "gamma", "cycle_lambda"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("t_seg", "t_restore"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")

    @property
    def channel(self) -> ChannelConfig:
        snr = math.inf if self.noiseless else self.snr_db
        return ChannelConfig(snr, self.fading, self.seed, self.per_symbol_fading)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: Mapping[str, Any]) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in values.items()})

    def replace(self, **changes) -> "PipelineConfig":
        return self.from_dict({**self.to_dict(), **changes})

    def check_paths(self, *names: str) -> None:
        """Referenced files must exist."""
        for name in names:
            path = getattr(self, name)
            if path and not Path(path).is_file():
                raise ConfigError(f"{name}: file {path!r} does not exist")


def _coerce(f: dataclasses.Field, value: Any):
    kind = type(f.default)
    if isinstance(value, kind) and not (kind is int and isinstance(value, bool)):
        return value
    text = str(value).strip()
    try:
        if kind is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{f.name}: cannot parse {text!r} as {kind.__name__}") from None
    return text


def parse_config_text(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    values: dict[str, Any] = parse_config_text(text)
    values.update(overrides or {})
    return PipelineConfig.from_dict(values)


def dump_config(config: PipelineConfig) -> str:
    return "".join(f"{k}={_format(v)}\n" for k, v in config.to_dict().items())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
