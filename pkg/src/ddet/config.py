"""Run configuration: flat ``section.key = value`` files.

Example::

    # model
    model.kernel_sizes = 3,5,7
    train.steps = 2000
    degrade.gauss_sigma = auto

Unknown keys are rejected with the offending line number.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .data import DegradeConfig
from .errors import ConfigError
from .model import ModelConfig


LR_SCHEDULES = ("constant", "cosine")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    patch: int = 64
    lr: float = 1e-3
    lr_schedule: str = "cosine"
    warmup_steps: int = 100
    adam_beta1: float = 0.9
    adam_beta2: float = 0.99
    seed: int = 42
    checkpoint_every: int = 500
    eval_every: int = 100
    synthetic_images: int = 16
    synthetic_size: int = 128

    def __post_init__(self):
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if self.steps < 0 or self.batch < 1 or self.warmup_steps < 0 or self.lr <= 0:
            raise ValueError("steps/warmup_steps must be >= 0, batch >= 1, lr > 0")

    def lr_at(self, step: int) -> float:
        """Learning rate for 1-based ``step``: linear warmup, then constant or cosine decay to 0."""
        if self.warmup_steps and step <= self.warmup_steps:
            return self.lr * step / self.warmup_steps
        if self.lr_schedule == "cosine" and self.steps > 0:
            return 0.5 * self.lr * (1 + math.cos(math.pi * min(step, self.steps) / self.steps))
        return self.lr


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "y"
    shave: int = 0
    split: str = "test"
    synthetic_images: int = 8


@dataclass(frozen=True)
class BenchConfig:
    size: int = 128
    repeats: int = 10
    warmup: int = 3
    models: str = "kpn5,kpn7,kpn13,kpn19,ddet"


@dataclass(frozen=True)
class PathsConfig:
    data_root: str = "data"
    out_dir: str = "runs"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    degrade: DegradeConfig = field(default_factory=DegradeConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


SECTIONS = tuple(f.name for f in dataclasses.fields(RunConfig))


def _hints(cls) -> dict:
    import ddet.data
    import ddet.model

    ns = {**vars(ddet.model), **vars(ddet.data), "Optional": Optional}
    return typing.get_type_hints(cls, globalns=ns)


def _parse_value(raw: str, typ, key: str):
    raw = raw.strip()
    origin = typing.get_origin(typ)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(typ) if a is not type(None)][0]
        return None if raw.lower() in ("auto", "none", "") else _parse_value(raw, inner, key)
    if typ is bool:
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if typ is tuple:
        return tuple(int(p) for p in raw.replace(" ", "").split(",") if p)
    return raw


def _format_value(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply_overrides(cfg: RunConfig, values: Mapping[str, str], lines: Optional[Mapping[str, int]] = None) -> RunConfig:
    """Return ``cfg`` with dotted-key string values applied."""
    grouped: dict[str, dict] = {}
    for key, raw in values.items():
        where = f"line {lines[key]}: " if lines and key in lines else ""
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ConfigError(f"{where}unknown key {key!r}")
        sub = getattr(cfg, section)
        hints = _hints(type(sub))
        if name not in hints:
            raise ConfigError(f"{where}unknown key {key!r}")
        try:
            grouped.setdefault(section, {})[name] = _parse_value(raw, hints[name], key)
        except ValueError as exc:
            raise ConfigError(f"{where}bad value for {key!r}: {exc}") from exc
    updates = {}
    for section, kv in grouped.items():
        try:
            updates[section] = dataclasses.replace(getattr(cfg, section), **kv)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid [{section}] settings: {exc}") from exc
    return dataclasses.replace(cfg, **updates)


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    values: dict[str, str] = {}
    lines: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = raw
        lines[key] = lineno
    return apply_overrides(base or RunConfig(), values, lines)


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def to_flat(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for section in SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            out[f"{section}.{f.name}"] = _format_value(getattr(sub, f.name))
    return out


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    current = None
    for key, value in to_flat(cfg).items():
        section = key.split(".", 1)[0]
        if section != current:
            if current is not None:
                lines.append("")
            lines.append(f"# {section}")
            current = section
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
