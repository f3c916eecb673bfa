"""Flat ``key = value`` configuration files with ``[section]`` headers.

Values stay strings until read through a typed accessor, so a config hashes
to the same digest however its values are later interpreted. Lists are
whitespace- or comma-separated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

KINDS = ("verify-bounds", "prediction", "control", "bandit", "sweep-d")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending ``section.key``."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}
_MISSING = object()


@dataclass
class Config:
    sections: dict[str, dict[str, str]] = field(default_factory=dict)
    source: Path | None = None

    @classmethod
    def parse(cls, text: str, source: Path | None = None) -> "Config":
        sections: dict[str, dict[str, str]] = {}
        current = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                if not current:
                    raise ConfigError(f"line {lineno}", "empty section name")
                sections.setdefault(current, {})
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw.strip()!r}")
            if current is None:
                raise ConfigError(f"line {lineno}", "key outside any [section]")
            key, value = (x.strip() for x in line.split("=", 1))
            sections[current][key] = value
        return cls(sections, source)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        return cls.parse(path.read_text(), source=path)

    def dumps(self) -> str:
        """Canonical text: sections and keys sorted."""
        out = []
        for name in sorted(self.sections):
            out.append(f"[{name}]")
            for key in sorted(self.sections[name]):
                out.append(f"{key} = {self.sections[name][key]}")
            out.append("")
        return "\n".join(out)

    def digest(self, *extra) -> str:
        h = hashlib.sha256(self.dumps().encode())
        for x in extra:
            h.update(f"\0{x}".encode())
        return h.hexdigest()[:12]

    def set(self, section: str, key: str, value) -> None:
        if isinstance(value, (list, tuple)):
            value = " ".join(str(v) for v in value)
        self.sections.setdefault(section, {})[key] = str(value)

    def has(self, section: str, key: str) -> bool:
        return key in self.sections.get(section, {})

    def section(self, name: str) -> dict[str, str]:
        return dict(self.sections.get(name, {}))

    # typed accessors; omitting ``default`` makes the key required -------

    def get(self, section: str, key: str, conv=str, default=_MISSING):
        try:
            raw = self.sections[section][key]
        except KeyError:
            if default is _MISSING:
                raise ConfigError(f"{section}.{key}", "required but missing") from None
            return default
        try:
            return conv(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}", str(exc)) from None

    def get_int(self, section, key, default=_MISSING) -> int:
        return self.get(section, key, int, default)

    def get_float(self, section, key, default=_MISSING) -> float:
        return self.get(section, key, float, default)

    def get_bool(self, section, key, default=_MISSING) -> bool:
        return self.get(section, key, _to_bool, default)

    def get_list(self, section, key, conv=float, default=_MISSING) -> list:
        items = self.get(section, key, lambda raw: [conv(x) for x in raw.replace(",", " ").split()], default)
        if items is default:
            return default
        if not items:
            raise ConfigError(f"{section}.{key}", "list must be nonempty")
        return items

    def resolve(self, value: str) -> Path:
        """A path from the config, taken relative to the config file."""
        path = Path(value)
        if self.source is not None and not path.is_absolute():
            path = self.source.parent / path
        return path


def _to_bool(s: str) -> bool:
    if s.lower() in _TRUE:
        return True
    if s.lower() in _FALSE:
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated top-level view of a :class:`Config`."""

    kind: str
    n_seeds: int
    master_seed: int
    config: Config

    @classmethod
    def from_config(cls, cfg: Config) -> "ExperimentConfig":
        kind = cfg.get("experiment", "kind")
        if kind not in KINDS:
            raise ConfigError("experiment.kind", f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
        n_seeds = cfg.get_int("experiment", "seeds", 1)
        if n_seeds < 1:
            raise ConfigError("experiment.seeds", "need at least one seed")
        master = cfg.get_int("experiment", "master_seed", 0)
        if master < 0:
            raise ConfigError("experiment.master_seed", "must be a nonnegative integer")
        for section, key in (("env", "map"),):
            if cfg.has(section, key) and cfg.get(section, key) != "canonical":
                path = cfg.resolve(cfg.get(section, key))
                if not path.exists():
                    raise ConfigError(f"{section}.{key}", f"file {path} does not exist")
        return cls(kind, n_seeds, master, cfg)

    def digest(self) -> str:
        return self.config.digest(self.master_seed, self.n_seeds)

    def seed_sequence(self, index: int):
        return seed_sequence(self.master_seed, index)


def seed_sequence(master_seed: int, index: int, *component: int):
    """Stream for run ``index`` of a master seed.

    Counter-based: the stream depends only on ``(master_seed, index,
    *component)``, so adding seeds never perturbs existing ones.
    """
    return np.random.SeedSequence(master_seed, spawn_key=(index, *component))
