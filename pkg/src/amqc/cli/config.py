"""INI run configuration: defaults < file < command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from amqc.cnn.network import PRESETS
from amqc.errors import ConfigError
from amqc.twin.model import FEED_BOUNDS, POWER_BOUNDS, SPEED_BOUNDS


@dataclass(frozen=True)
class Key:
    kind: str  # int, float, str, bool, pair
    default: object
    lo: float | None = None
    hi: float | None = None
    choices: tuple = ()


SCHEMA = {
    "data": {
        "n_samples": Key("int", 2000, 4, 1_000_000),
        "seed": Key("int", 42, 0, 2**64 - 1),
        "out_dir": Key("str", "runs"),
    },
    "train": {
        "preset": Key("str", "tiny", choices=tuple(sorted(PRESETS))),
        "epochs": Key("int", 36, 0, 10_000),
        "lr": Key("float", 0.01, 0.0, 10.0),
        "lr_decay": Key("float", 0.5, 0.01, 1.0),
        "decay_every": Key("int", 12, 0, 10_000),
        "batch_size": Key("int", 32, 1, 4096),
        "seed": Key("int", 42, 0, 2**64 - 1),
    },
    "quant": {
        "calibration_n": Key("int", 256, 16, 1_000_000),
    },
    "bench": {
        "batch_size": Key("int", 32, 1, 4096),
        "frames": Key("int", 128, 100, 1_000_000),
        "warmup": Key("int", 10, 10, 10_000),
    },
    "broker": {
        "host": Key("str", "127.0.0.1"),
        "port": Key("int", 1883, 0, 65535),
        "retransmit_ms": Key("int", 200, 1, 60_000),
    },
    "loop": {
        "layers": Key("int", 200, 2, 1_000_000),
        "sites": Key("int", 200, 1, 1_000_000),
        "thresholds": Key("pair", (0.05, 0.05), 0.0, 1.0),
        "mode": Key("str", "model_only", choices=("model_only", "full_pipeline")),
        "controller": Key("bool", True),
        "power": Key("float", 350.0, *POWER_BOUNDS),
        "speed": Key("float", 500.0, *SPEED_BOUNDS),
        "feed": Key("float", 1.0, *FEED_BOUNDS),
        "seed": Key("int", 42, 0, 2**64 - 1),
        "node_id": Key("int", 1, 0, 65535),
    },
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _fmt_bounds(key):
    return f"[{key.lo:g}, {key.hi:g}]"


def parse_value(section, name, raw):
    """Convert and bounds-check one raw value (string or already typed)."""
    key = SCHEMA[section][name]
    where = f"{section}.{name}"
    try:
        if key.kind == "int":
            value = int(raw)
            if isinstance(raw, float) and raw != value:
                raise ValueError
        elif key.kind == "float":
            value = float(raw)
        elif key.kind == "bool":
            if isinstance(raw, bool):
                value = raw
            elif str(raw).strip().lower() in _TRUE:
                value = True
            elif str(raw).strip().lower() in _FALSE:
                value = False
            else:
                raise ValueError
        elif key.kind == "pair":
            parts = raw.split(",") if isinstance(raw, str) else list(raw)
            value = tuple(float(p) for p in parts)
            if len(value) != 2:
                raise ValueError
        else:
            value = str(raw).strip()
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {raw!r} as {key.kind}") from None
    if key.choices and value not in key.choices:
        raise ConfigError(f"{where}={value!r} must be one of {', '.join(key.choices)}")
    if key.lo is not None:
        vals = value if key.kind == "pair" else (value,)
        if not all(key.lo <= v <= key.hi for v in vals):
            raise ConfigError(f"{where}={raw} outside {_fmt_bounds(key)}")
        if key.kind == "pair" and min(vals) <= 0:
            raise ConfigError(f"{where}={raw} thresholds must be > 0")
    return value


class RunConfig:
    """Section -> {key: value}; attribute access per section (``cfg.train['epochs']``)."""

    def __init__(self, values):
        self._values = {s: dict(v) for s, v in values.items()}

    def __getattr__(self, section):
        try:
            return self._values[section]
        except KeyError:
            raise AttributeError(section) from None

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def as_dict(self):
        """Plain JSON-ready nested dict (pairs become lists)."""
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(vals.items())}
                for s, vals in sorted(self._values.items())}

    def to_ini(self):
        lines = []
        for s, vals in self.as_dict().items():
            lines.append(f"[{s}]")
            for k, v in vals.items():
                if isinstance(v, list):
                    v = ", ".join(repr(x) for x in v)
                elif isinstance(v, bool):
                    v = "on" if v else "off"
                lines.append(f"{k} = {v}")
            lines.append("")
        return "\n".join(lines)


def defaults():
    return RunConfig({s: {k: key.default for k, key in keys.items()}
                      for s, keys in SCHEMA.items()})


def load_config(path=None, overrides=None):
    """``overrides`` maps ``"section.key"`` to raw values (from flags)."""
    values = defaults()._values
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {path} does not exist") from None
        except configparser.Error as exc:
            raise ConfigError(f"config file {path}: {exc.message.splitlines()[0]}") from None
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}] in {path}")
            for name, raw in parser.items(section):
                if name not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{name} in {path}")
                values[section][name] = parse_value(section, name, raw)
    for dotted, raw in (overrides or {}).items():
        section, _, name = dotted.partition(".")
        if section not in SCHEMA or name not in SCHEMA[section]:
            raise ConfigError(f"unknown key {dotted}")
        values[section][name] = parse_value(section, name, raw)
    return RunConfig(values)
