"""The four benchmark tasks and per-sample parameter draws for Combined."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .errors import ValidationError
from .propagation import Environment, SourceSpec, TaskConfig, Variant

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class ScenarioSettings:
    """Task defaults; every field can be overridden from a TOML file."""

    source_db: float = 95.0
    frequency_hz: float = 500.0
    alpha_vert: float = 0.1
    reflection_order: int = 1
    level_db_range: tuple = (60.0, 115.0)
    temperature_c_range: tuple = (-10.0, 30.0)
    humidity_pct_range: tuple = (20.0, 90.0)
    # environment for tasks without per-sample draws (atmosphere is off there)
    temperature_c: float = 20.0
    humidity_pct: float = 70.0

    @classmethod
    def from_toml(cls, path) -> "ScenarioSettings":
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        return cls.from_mapping(doc.get("scenario", doc))

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioSettings":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValidationError(f"unknown scenario settings: {sorted(unknown)}")
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
        return replace(cls(), **values)

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SampleParams:
    sample_id: int
    task: TaskConfig
    seed: int


def sample_rng(master_seed: int, sample_id: int) -> np.random.Generator:
    """Counter-based stream keyed by (master_seed, sample_id)."""
    key = ((master_seed & (2**64 - 1)) << 64) | (sample_id & (2**64 - 1))
    return np.random.Generator(np.random.Philox(key=key))


def make_task(variant, sample_id: int = 0, master_seed: int = 0,
              settings: Optional[ScenarioSettings] = None,
              reflection_order: Optional[int] = None) -> TaskConfig:
    s = settings or ScenarioSettings()
    variant = Variant(variant)
    order = s.reflection_order if reflection_order is None else reflection_order
    source = SourceSpec(s.source_db, s.frequency_hz)
    env = Environment(s.temperature_c, s.humidity_pct)
    if variant is Variant.BASELINE:
        return TaskConfig(variant, source, env, alpha_vert=s.alpha_vert)
    if variant is Variant.DIFFRACTION:
        return TaskConfig(variant, source, env, enable_diffraction=True, alpha_vert=s.alpha_vert)
    if variant is Variant.REFLECTION:
        return TaskConfig(variant, source, env, max_reflection_order=order, alpha_vert=s.alpha_vert)
    rng = sample_rng(master_seed, sample_id)
    level = float(rng.uniform(*s.level_db_range))
    temperature = float(rng.uniform(*s.temperature_c_range))
    humidity = float(rng.uniform(*s.humidity_pct_range))
    return TaskConfig(
        variant,
        SourceSpec(level, s.frequency_hz),
        Environment(temperature, humidity),
        enable_diffraction=True,
        max_reflection_order=order,
        alpha_vert=s.alpha_vert,
        enable_atmosphere=True,
    )


def make_sample(variant, sample_id: int, master_seed: int,
                settings: Optional[ScenarioSettings] = None,
                reflection_order: Optional[int] = None) -> SampleParams:
    task = make_task(variant, sample_id, master_seed, settings, reflection_order)
    return SampleParams(sample_id, task, master_seed)


def task_echo(task: TaskConfig) -> dict:
    """Flat, JSON-friendly record of every effective task value."""
    return {
        "variant": task.variant.value,
        "source_db": task.source.level_db,
        "frequency_hz": task.source.frequency_hz,
        "temperature_c": task.env.temperature_c,
        "humidity_pct": task.env.humidity_pct,
        "enable_diffraction": task.enable_diffraction,
        "max_reflection_order": task.max_reflection_order,
        "alpha_vert": task.alpha_vert,
        "enable_atmosphere": task.enable_atmosphere,
    }
