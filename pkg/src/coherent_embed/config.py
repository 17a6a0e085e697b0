"""Run configuration addressed by dotted keys, and seed derivation.

Config files are UTF-8 text with one ``section.field = value`` per line;
``#`` starts a comment.  Sections: ``synth``, ``augment``, ``loss``,
``mining``, ``train``, ``encoder``, ``eval``.

Every random stream is seeded from one root seed through
``core.derive_seed``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .core import derive_seed  # noqa: F401  re-exported
from .data import AugmentationConfig, SyntheticSpec
from .encoder import EncoderConfig
from .evaluation import EvalConfig
from .losses import LossConfig
from .mining import MiningSchedule
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "synth": SyntheticSpec,
    "augment": AugmentationConfig,
    "loss": LossConfig,
    "mining": MiningSchedule,
    "train": TrainConfig,
    "encoder": EncoderConfig,
    "eval": EvalConfig,
}


@dataclass
class RunConfig:
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    augment: AugmentationConfig = field(default_factory=AugmentationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    mining: MiningSchedule = field(default_factory=MiningSchedule)
    train: TrainConfig = field(default_factory=TrainConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def set(self, key: str, text: str) -> None:
        """Apply one ``section.field=value`` override, re-validating the section."""
        self.update([(key, text)])

    def update(self, pairs) -> None:
        """Apply ``(key, text)`` overrides; each touched section is validated once, after all its fields are set."""
        staged = {}
        for key, text in pairs:
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise ConfigError(f"unknown config key {key!r}")
            obj = getattr(self, section)
            if name not in {f.name for f in dataclasses.fields(obj)}:
                raise ConfigError(f"unknown config key {key!r}")
            values = staged.setdefault(section, dataclasses.asdict(obj))
            try:
                values[name] = parse_value(typing.get_type_hints(type(obj))[name], text.strip())
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        for section, values in staged.items():
            try:
                setattr(self, section, SECTIONS[section](**values))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{section}: {exc}") from None

    def as_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(**{name: SECTIONS[name](**d.get(name, {})) for name in SECTIONS})

    def dump(self) -> str:
        lines = []
        for section, values in self.as_dict().items():
            for name, value in values.items():
                lines.append(f"{section}.{name} = {format_value(value)}")
        return "\n".join(lines) + "\n"


def parse_value(hint, text: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union:
        if type(None) in args and text.lower() in ("none", ""):
            return None
        errors = []
        for arg in (a for a in args if a is not type(None)):
            try:
                return parse_value(arg, text)
            except ValueError as exc:
                errors.append(str(exc))
        raise ValueError("; ".join(errors))
    if hint is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    if hint is list or origin is list:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    raise ValueError(f"unsupported field type {hint!r}")


def format_value(value) -> str:
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


def parse_config_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    pairs = []
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                pairs = parse_config_text(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    cfg.update(pairs)
    return cfg
