"""INI run configuration mirroring the module config dataclasses.

Sections are ``charged``, ``socialnav``, ``encoder``, ``decoder`` and
``train``; keys are the dataclass field names. Unknown sections or keys are
errors. Command-line overrides are applied on top of the file.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .sim_charged import ChargedConfig
from .sim_socialnav import SocialnavConfig
from .trainer import TrainConfig

SECTIONS = {
    "charged": ChargedConfig,
    "socialnav": SocialnavConfig,
    "encoder": EncoderConfig,
    "decoder": DecoderConfig,
    "train": TrainConfig,
}


class ConfigError(ValueError):
    pass


def _coerce(cls, key: str, text: str):
    default = {f.name: f for f in fields(cls)}[key].default
    kind = type(default)
    try:
        if kind is bool:
            return {"true": True, "1": True, "yes": True,
                    "false": False, "0": False, "no": False}[text.strip().lower()]
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text.strip()
    except (KeyError, ValueError):
        raise ConfigError(f"[{cls.__name__}] {key}: cannot read {text!r} as {kind.__name__}") from None


@dataclass
class RunConfig:
    charged: ChargedConfig = field(default_factory=ChargedConfig)
    socialnav: SocialnavConfig = field(default_factory=SocialnavConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    # "section.key" entries set by a file or a flag rather than defaulted
    explicit: frozenset = frozenset()

    def is_set(self, section: str, key: str) -> bool:
        return f"{section}.{key}" in self.explicit

    def override(self, section: str, **values) -> "RunConfig":
        """Copy with the non-``None`` values replaced in one section."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        cls = SECTIONS[section]
        known = {f.name for f in fields(cls)}
        bad = sorted(set(values) - known)
        if bad:
            raise ConfigError(f"unknown key(s) for [{section}]: {', '.join(bad)}")
        try:
            new = replace(getattr(self, section), **values)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{section}] {exc}") from exc
        return replace(self, **{section: new},
                       explicit=self.explicit | {f"{section}.{k}" for k in values})

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        for name in SECTIONS:
            cp[name] = {k: repr(v) if isinstance(v, float) else str(v)
                        for k, v in getattr(self, name).to_dict().items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_ini())


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    run = RunConfig()
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        cls = SECTIONS[section]
        known = {f.name for f in fields(cls)}
        values = {}
        for key, text_value in cp[section].items():
            if key not in known:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            values[key] = _coerce(cls, key, text_value)
        run = run.override(section, **values)
    return run


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)
