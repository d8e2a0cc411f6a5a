"""Experiment configuration: flat `key = value` files, `#` comments.

One seed drives every stochastic component downstream (material sampling,
stroke noise, weight init, shuffling), so fixing the seed fixes all
pipeline outputs bitwise.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .stroke_sim import StrokeConfig


class ConfigError(ValueError):
    """Malformed config text, unknown key, or unreadable file."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one pipeline run needs; all paths live under out_dir."""

    seed: int = 0
    train_materials: int = 15        # known: used for training and held in
    unknown_materials: int = 10      # held out, embedded for generalization
    strokes_per_material: int = 10
    augment_per: str = "material"    # material: 8 crops per stroke octet
    out_dir: str = "run"

    # stroke acquisition overrides
    steps: int = 900
    sample_rate: float = 100.0
    press_force: float = 5.0
    stroke_length: float = 3.0e-2
    speed: float = 2.0e-3
    sensor_noise_sd: float = 40.0

    # reconstruction-net training
    epochs: int = 200
    alpha: float = 1e-3
    batch_size: int = 15

    # classifier training (shares alpha and batch size)
    classifier_epochs: int = 200

    # cap on training records per material, 0 = all; capped picks spread
    # evenly over each material's sorted records for cheap runs
    train_cap: int = 0

    def __post_init__(self):
        if self.augment_per not in ("material", "stroke"):
            raise ConfigError(
                f"augment_per must be material|stroke, got {self.augment_per!r}")
        if self.train_materials < 1 or self.unknown_materials < 0:
            raise ConfigError("need at least 1 training material, >= 0 unknown")
        if self.strokes_per_material < 1:
            raise ConfigError("strokes_per_material must be positive")
        if self.epochs < 1 or self.classifier_epochs < 1:
            raise ConfigError("epoch counts must be positive")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (train-mode batch norm)")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.train_cap < 0:
            raise ConfigError("train_cap must be >= 0")

    def stroke_config(self):
        return StrokeConfig(steps=self.steps, sample_rate=self.sample_rate,
                            press_force=self.press_force,
                            stroke_length=self.stroke_length,
                            speed=self.speed,
                            sensor_noise_sd=self.sensor_noise_sd)


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def parse_config_text(text):
    """`key = value` per line into a str->str mapping; `#` starts a comment."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {ln}: empty key or value in {raw!r}")
        if key in out:
            raise ConfigError(f"line {ln}: duplicate key {key!r}")
        out[key] = value
    return out


def _coerce(key, value):
    ftype = _FIELD_TYPES[key]
    if ftype is str:
        return value
    try:
        return ftype(value)
    except ValueError:
        raise ConfigError(
            f"key {key!r}: cannot parse {value!r} as {ftype.__name__}") from None


def config_from_mapping(mapping):
    unknown = sorted(set(mapping) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return ExperimentConfig(
            **{k: _coerce(k, v) for k, v in mapping.items()})
    except TypeError as e:
        raise ConfigError(str(e)) from None


def load_config(path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return config_from_mapping(parse_config_text(p.read_text()))


def format_config(cfg):
    """Round-trippable `key = value` dump in field order."""
    lines = [f"{f.name} = {getattr(cfg, f.name)}"
             for f in dataclasses.fields(ExperimentConfig)]
    return "\n".join(lines) + "\n"
