"""Run configuration stored as a sectioned INI file."""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

PROBLEM_KINDS = ("poisson", "diffusion", "turing2", "stripes", "coupled4", "custom")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.replace(",", " ").split())


def _words(text: str) -> tuple:
    return tuple(x for x in text.replace(",", " ").split())


def _join(values) -> str:
    return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in values)


def _optional(kind):
    def parse(text):
        return None if text.strip().lower() in ("", "none") else kind(text)
    return parse


# section, key, parser; key names equal the RunConfig field names
_SCHEMA = {
    "problem": {
        "kind": str,
        "exact": _optional(str),
        "a": float,
        "b": _floats,
        "c": float,
        "forcing": float,
        "dirichlet": float,
        "variant": str,
    },
    "geometry": {
        "surface": str,
        "mesh": str,
        "degree": int,
    },
    "solver": {
        "regularization": str,
        "vertex_rule": str,
    },
    "time": {
        "scheme": int,
        "dt": float,
        "steps": int,
        "snapshot_times": _floats,
        "snapshot_every": _optional(int),
    },
    "sweep": {
        "refinements": _words,
        "degrees": _ints,
    },
    "output": {
        "output_dir": str,
        "seed": _optional(int),
        "threads": int,
        "figures": lambda t: t.strip().lower() in ("1", "true", "yes", "on"),
    },
}

_SECTION_OF = {key: sec for sec, keys in _SCHEMA.items() for key in keys}


@dataclass
class RunConfig:
    """Everything a CLI run needs.

    Reaction parameters live in the free-form ``[reaction]`` section and
    are validated against the preset when the system is built.
    """

    kind: str = "poisson"
    exact: str | None = None
    a: float = 1.0
    b: tuple = (0.0, 0.0, 0.0)
    c: float = 0.0
    forcing: float = 0.0
    dirichlet: float = 0.0
    variant: str = "printed"
    surface: str = "sphere"
    mesh: str = "icosphere:2"
    degree: int = 8
    regularization: str = "auto"
    vertex_rule: str = "auto"
    scheme: int = 2
    dt: float = 0.1
    steps: int = 0
    snapshot_times: tuple = ()
    snapshot_every: int | None = None
    refinements: tuple = ()
    degrees: tuple = ()
    output_dir: str = "out"
    seed: int | None = None
    threads: int = 0
    figures: bool = True
    reaction: dict = field(default_factory=dict)

    def validate(self) -> "RunConfig":
        if self.kind not in PROBLEM_KINDS:
            raise ConfigError(f"kind must be one of {', '.join(PROBLEM_KINDS)}; got {self.kind!r}")
        if not 1 <= self.degree <= 20:
            raise ConfigError(f"degree must be in 1..20, got {self.degree}")
        if self.scheme not in (1, 2, 3, 4):
            raise ConfigError(f"scheme must be 1..4, got {self.scheme}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ConfigError(f"steps must be non-negative, got {self.steps}")
        if self.regularization not in ("auto", "none", "mean-zero", "pin-node"):
            raise ConfigError(f"unknown regularization {self.regularization!r}")
        if self.vertex_rule not in ("auto", "residual", "binormal"):
            raise ConfigError(f"unknown vertex_rule {self.vertex_rule!r}")
        if self.variant not in ("printed", "u2"):
            raise ConfigError(f"variant must be 'printed' or 'u2', got {self.variant!r}")
        if len(self.b) != 3:
            raise ConfigError(f"b needs 3 components, got {len(self.b)}")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if self.snapshot_every is not None and self.snapshot_every <= 0:
            raise ConfigError("snapshot_every must be positive")
        for key, value in self.reaction.items():
            if not isinstance(value, float):
                raise ConfigError(f"reaction parameter {key} must be a number")
        return self

    def update(self, **values) -> "RunConfig":
        names = {f.name for f in fields(self)}
        for key, value in values.items():
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, value)
        return self

    # {{{ serialization

    def to_string(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        for section, keys in _SCHEMA.items():
            parser[section] = {}
            for key in keys:
                value = getattr(self, key)
                if value is None:
                    text = "none"
                elif isinstance(value, tuple):
                    text = _join(value)
                elif isinstance(value, float):
                    text = repr(value)
                else:
                    text = str(value)
                parser[section][key] = text
        parser["reaction"] = {k: repr(v) for k, v in sorted(self.reaction.items())}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_string(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {' '.join(str(exc).split())}") from None
        cfg = cls()
        for section in parser.sections():
            if section == "reaction":
                try:
                    cfg.reaction = {k: float(v) for k, v in parser[section].items()}
                except ValueError as exc:
                    raise ConfigError(f"[reaction]: {exc}") from None
                continue
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, text in parser[section].items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                try:
                    setattr(cfg, key, _SCHEMA[section][key](text))
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from None
        return cfg.validate()

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_string(fh.read())

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_string())

    # }}}


def section_of(key: str) -> str:
    return "reaction" if key not in _SECTION_OF else _SECTION_OF[key]
