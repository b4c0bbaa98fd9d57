"""Pipeline configuration: one JSON document, validated section by section."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, fields

from .augment import AugmentConfig
from .consistency import TriLossWeights
from .sim import ColonyConfig, DetectorNoise
from .tta import UncertaintyWeights


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    tile_size: int = 512
    overlap_frac: float = 0.30
    gsd: float = 0.02
    tau: float = 0.5
    missing_pass: str = "zero"
    tta_passes: int = 8
    uncertainty_weights: UncertaintyWeights = UncertaintyWeights()
    radius_m: float = 15.2
    burrow_conf_threshold: float = 0.5
    uscore_iou: float = 0.5
    tri_loss_weights: TriLossWeights = TriLossWeights()
    augment: AugmentConfig = AugmentConfig()
    colony: ColonyConfig = ColonyConfig()
    noise: DetectorNoise = DetectorNoise()
    seed: int = 0

    def __post_init__(self):
        if self.tile_size < 1:
            raise ConfigError("tile_size must be >= 1")
        if not 0.0 <= self.overlap_frac < 1.0:
            raise ConfigError("overlap_frac must lie in [0, 1)")
        if self.gsd <= 0 or self.radius_m <= 0:
            raise ConfigError("gsd and radius_m must be positive")
        if not 0.0 < self.tau <= 1.0 or not 0.0 < self.uscore_iou <= 1.0:
            raise ConfigError("tau and uscore_iou must lie in (0, 1]")
        if not 0.0 <= self.burrow_conf_threshold <= 1.0:
            raise ConfigError("burrow_conf_threshold must lie in [0, 1]")
        if self.missing_pass not in ("zero", "ignore"):
            raise ConfigError("missing_pass must be 'zero' or 'ignore'")
        if self.tta_passes < 1:
            raise ConfigError("tta_passes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "config")


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read a JSON config (or start from defaults) and apply flag overrides.

    ``overrides`` may use dotted keys for nested sections, e.g.
    ``{"colony.n_animals": 100}``; ``None`` values are ignored.
    """
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return config_from_dict(data)
