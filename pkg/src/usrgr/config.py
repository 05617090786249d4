"""Flat ``key = value`` run configuration.

Every key mirrors a field of :class:`~usrgr.train.TrainConfig`, its nested
:class:`~usrgr.losses.LossConfig` and :class:`~usrgr.models.ModelConfig`, or
:class:`~usrgr.kspace.DegradeConfig`. ``sinc_taps`` is shared by the loss and
the degradation. Blank lines and ``#`` comments are ignored; dashes in keys
are read as underscores. ``msssim_weights`` takes a comma-separated list.

Example::

    # desk-scale run
    seed = 3
    steps = 2000
    n_feats = 16
    no_fid = false
"""
from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Iterable

from .kspace import DegradeConfig
from .losses import LossConfig
from .models import ModelConfig
from .train import TrainConfig

_GROUPS = {
    "train": TrainConfig,
    "loss": LossConfig,
    "model": ModelConfig,
    "degrade": DegradeConfig,
}
_NESTED = {"loss", "model"}


class ConfigError(ValueError):
    """Bad config key or value; ``key`` names the offender."""

    def __init__(self, msg: str, key: str | None = None):
        super().__init__(msg)
        self.key = key


def _schema() -> dict[str, tuple[list[str], Any]]:
    """key -> (groups that own it, default value)."""
    out: dict[str, tuple[list[str], Any]] = {}
    for group, cls in _GROUPS.items():
        inst = cls()
        for fld in fields(cls):
            if group == "train" and fld.name in _NESTED:
                continue
            groups, default = out.get(fld.name, ([], getattr(inst, fld.name)))
            out[fld.name] = (groups + [group], default)
    return out


SCHEMA = _schema()

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def _parse_value(key: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type(default).__name__}", key) from None


def _format_value(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


class RunConfig:
    """Effective values for every known key, built from defaults, a file and overrides."""

    def __init__(self, values: dict[str, Any] | None = None):
        self.values = {k: d for k, (_, d) in SCHEMA.items()}
        # the loss weights follow the scale count unless given explicitly
        self.values["msssim_weights"] = None
        for k, v in (values or {}).items():
            self.set(k, v)

    @staticmethod
    def _key(key: str) -> str:
        k = key.strip().replace("-", "_")
        if k not in SCHEMA:
            raise ConfigError(f"unknown config key {key.strip()!r}", key.strip())
        return k

    def set(self, key: str, value: Any) -> None:
        k = self._key(key)
        default = SCHEMA[k][1]
        if isinstance(value, str):
            value = _parse_value(k, value, default)
        self.values[k] = value

    def update_text(self, text: str, source: str = "<config>") -> "RunConfig":
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
            key, raw = line.split("=", 1)
            self.set(key, raw)
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        return cls().update_text(p.read_text(), str(p))

    def apply(self, overrides: Iterable[str]) -> "RunConfig":
        """Apply ``key=value`` strings (command-line ``--set``)."""
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            self.set(k, v)
        return self

    def __getitem__(self, key: str) -> Any:
        return self.values[self._key(key)]

    def _kwargs(self, group: str) -> dict:
        return {k: v for k, v in self.values.items() if group in SCHEMA[k][0] and v is not None}

    def loss_config(self) -> LossConfig:
        return self._build(LossConfig, "loss")

    def model_config(self) -> ModelConfig:
        return self._build(ModelConfig, "model")

    def degrade_config(self) -> DegradeConfig:
        return self._build(DegradeConfig, "degrade")

    def train_config(self) -> TrainConfig:
        base = self._build(TrainConfig, "train")
        return replace(base, loss=self.loss_config(), model=self.model_config())

    def _build(self, cls, group: str):
        try:
            return cls(**self._kwargs(group))
        except ValueError as e:
            raise ConfigError(f"invalid {group} config: {e}") from e

    def validate(self) -> "RunConfig":
        self.train_config()
        self.degrade_config()
        return self

    def echo(self, header: Iterable[str] = ()) -> str:
        """Effective config in the same ``key = value`` format, readable by :meth:`from_file`."""
        lines = [f"# {h}" for h in header]
        for k in sorted(self.values):
            v = self.values[k]
            if v is None:
                continue
            lines.append(f"{k} = {_format_value(v)}")
        return "\n".join(lines) + "\n"
