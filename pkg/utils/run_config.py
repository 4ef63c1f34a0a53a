"""
Run configuration for the UCIP command line
Loads [model], [train] and [data] from a TOML file, applies
section.key=value overrides, validates everything and echoes the
effective result into the run directory
"""

import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from config import DATA_DEFAULTS, EFFECTIVE_CONFIG_NAME, MODEL_DEFAULTS, TRAIN_DEFAULTS
from ucip.degrade import DegradationSpec
from ucip.errors import ConfigError, DegradationError
from ucip.model import ModelConfig
from ucip.trainer import TrainConfig
from utils.helpers import parse_override, write_json

logger = logging.getLogger(__name__)

SECTIONS = {"model": MODEL_DEFAULTS, "train": TRAIN_DEFAULTS, "data": DATA_DEFAULTS}
PATH_KEYS = ("manifest", "eval_manifest")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    specs: list = field(default_factory=list)
    manifest: Path = None
    eval_manifest: Path = None
    source: Path = None

    def validate(self):
        self.model.validate()
        self.train.validate()
        if not self.specs:
            raise ConfigError("data.specs", "at least one degradation spec is required")
        return self

    def to_dict(self):
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": {
                "specs": [str(s) for s in self.specs],
                "manifest": str(self.manifest) if self.manifest else None,
                "eval_manifest": str(self.eval_manifest) if self.eval_manifest else None,
            },
            "source": str(self.source) if self.source else None,
        }

    def echo(self, out_dir):
        """Write <out>/effective_config.json"""
        return write_json(Path(out_dir) / EFFECTIVE_CONFIG_NAME, self.to_dict())


def _coerce(section, key, value, default):
    name = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    return value


def _merge(raw, overrides):
    """Return the merged sections and the section.key names set by overrides"""
    merged = {section: dict(defaults) for section, defaults in SECTIONS.items()}
    overridden = set()
    for section, values in raw.items():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section, expected one of {sorted(SECTIONS)}")
        if not isinstance(values, dict):
            raise ConfigError(section, "must be a table")
        for key, value in values.items():
            merged[section][key] = value
    for text in overrides:
        section, key, value = parse_override(text)
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section, expected one of {sorted(SECTIONS)}")
        merged[section][key] = value
        overridden.add(f"{section}.{key}")

    for section, values in merged.items():
        for key in values:
            if key not in SECTIONS[section]:
                raise ConfigError(f"{section}.{key}", "unknown field")
            values[key] = _coerce(section, key, values[key], SECTIONS[section][key])
    return merged, overridden


def _parse_specs(value):
    items = value if isinstance(value, list) else str(value).split(",")
    try:
        return [DegradationSpec.parse(str(item)) for item in items if str(item).strip()]
    except DegradationError as e:
        raise ConfigError("data.specs", str(e)) from e


def load_run_config(path=None, overrides=()):
    """Defaults ← TOML file ← overrides, validated"""
    raw = {}
    source = None
    if path is not None:
        source = Path(path)
        try:
            with open(source, "rb") as f:
                raw = tomllib.load(f)
        except FileNotFoundError as e:
            raise ConfigError("--config", f"{source} does not exist") from e
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("--config", f"{source} is not valid TOML: {e}") from e

    merged, overridden = _merge(raw, overrides)
    # file paths are relative to the file, command line paths to the working directory
    file_base = source.parent if source is not None else Path(".")
    paths = {}
    for key in PATH_KEYS:
        value = merged["data"][key]
        if not value:
            paths[key] = None
        elif f"data.{key}" in overridden:
            paths[key] = Path(value)
        else:
            paths[key] = file_base / value
    cfg = RunConfig(
        model=ModelConfig(**merged["model"]),
        train=TrainConfig(**merged["train"]),
        specs=_parse_specs(merged["data"]["specs"]),
        source=source,
        **paths,
    )
    logger.debug(f"Loaded run config from {source or 'defaults'} with {len(overrides)} override(s)")
    return cfg.validate()


def echo_arguments(out_dir, args):
    """Effective options of a command that takes no run config"""
    options = {k: v for k, v in vars(args).items() if k not in ("handler", "overrides")}
    return write_json(Path(out_dir) / EFFECTIVE_CONFIG_NAME, options)
