"""Run configuration: one dataclass per section plus a strict YAML loader.

Every section validates itself and reports *all* problems at once through
:class:`ConfigError`.  Unknown keys are rejected so that typos in a config file
fail loudly instead of silently falling back to defaults.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .codec import CodecConfig

log = logging.getLogger(__name__)

STANDARD_RESOLUTIONS = (128, 192, 256, 320, 384, 448, 512)
SCHEMES = ("learned", "mesh", "whole")
AGGREGATORS = ("attention", "sum", "concat")


class ConfigError(ValueError):
    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


class _Section:
    """Mixin: run ``_problems`` after init and raise them together."""

    def __post_init__(self):
        problems = self._problems()
        if problems:
            name = type(self).__name__
            raise ConfigError([f"{name}: {p}" for p in problems])

    def _problems(self) -> list[str]:
        return []


@dataclass(frozen=True)
class ModelConfig(_Section):
    scheme: str = "learned"
    aggregator: str = "attention"
    input_resolution: int = 512
    in_channels: int = 1
    channels: tuple[int, ...] = (32, 64, 128, 256)
    blocks_per_stage: int = 1
    residual: bool = True
    padding_mode: str = "zeros"
    grid: tuple[int, int] = (8, 8)
    attention_dim: int = 128
    head_hidden: int = 128

    @property
    def n_stages(self) -> int:
        return len(self.channels)

    @property
    def stride(self) -> int:
        # stem + one stride-2 downsampling per stage
        return 2 ** (self.n_stages + 1)

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    @property
    def n_instances(self) -> int:
        if self.scheme == "mesh":
            return self.grid[0] * self.grid[1]
        if self.scheme == "learned":
            return (self.input_resolution // self.stride) ** 2
        return 1

    def _problems(self):
        out = []
        if self.scheme not in SCHEMES:
            out.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.aggregator not in AGGREGATORS:
            out.append(f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}")
        if self.input_resolution < 1:
            out.append("input_resolution must be positive")
        elif self.input_resolution not in STANDARD_RESOLUTIONS:
            log.warning("input_resolution %d is not one of %s", self.input_resolution, STANDARD_RESOLUTIONS)
        if self.in_channels not in (1, 3):
            out.append("in_channels must be 1 or 3")
        if not self.channels or any(c < 1 for c in self.channels):
            out.append("channels must be a non-empty list of positive integers")
        if self.blocks_per_stage < 1:
            out.append("blocks_per_stage must be >= 1")
        if self.padding_mode not in ("zeros", "reflect", "replicate", "circular"):
            out.append(f"unknown padding_mode {self.padding_mode!r}")
        if len(self.grid) != 2 or min(self.grid) < 1:
            out.append("grid must be two positive integers (rows, cols)")
        if self.attention_dim < 1 or self.head_hidden < 1:
            out.append("attention_dim and head_hidden must be positive")
        if out:
            return out
        res = self.input_resolution
        if self.scheme == "mesh":
            rows, cols = self.grid
            if res % rows or res % cols:
                out.append(f"input_resolution {res} is not divisible by grid {tuple(self.grid)}")
            elif min(res // rows, res // cols) < self.stride:
                out.append(f"mesh patches of {res // rows}x{res // cols} are smaller than the backbone stride {self.stride}")
        elif self.scheme == "learned" and res % self.stride:
            out.append(f"input_resolution {res} must be a multiple of the backbone stride {self.stride}")
        return out


@dataclass(frozen=True)
class LossConfig(_Section):
    alpha: float = 0.5
    decay_w: float = 0.9
    epoch_scale: float = 30.0
    eps: float = 1e-7

    def _problems(self):
        out = []
        if not 0 <= self.alpha <= 1:
            out.append(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0 < self.decay_w < 1:
            out.append(f"decay_w must lie in (0, 1), got {self.decay_w}")
        if not self.epoch_scale > 0:
            out.append(f"epoch_scale must be positive, got {self.epoch_scale}")
        if not 0 < self.eps < 0.5:
            out.append(f"eps must lie in (0, 0.5), got {self.eps}")
        return out


@dataclass(frozen=True)
class SamplerConfig(_Section):
    batch_size: int = 15
    r_bin: float | None = None  # None -> codec.r_bin
    seed: int = 0
    balanced: bool = True

    def _problems(self):
        out = []
        if self.batch_size < 1:
            out.append(f"batch_size must be >= 1, got {self.batch_size}")
        if self.r_bin is not None and not self.r_bin > 0:
            out.append(f"r_bin must be positive, got {self.r_bin}")
        return out


@dataclass(frozen=True)
class AugmentConfig(_Section):
    enabled: bool = True
    hflip_p: float = 0.5
    vflip_p: float = 0.5
    brightness: float = 0.1  # fraction of the intensity std
    rotation_deg: float = 15.0

    def _problems(self):
        out = []
        for name in ("hflip_p", "vflip_p"):
            if not 0 <= getattr(self, name) <= 1:
                out.append(f"{name} must lie in [0, 1]")
        if self.brightness < 0 or self.rotation_deg < 0:
            out.append("brightness and rotation_deg must be non-negative")
        return out


@dataclass(frozen=True)
class TrainConfig(_Section):
    epochs: int = 200
    lr: float = 0.002
    lr_decay_factor: float = 0.1
    lr_decay_period: int = 10
    lr_floor: float = 1e-6
    seed: int = 0
    val_fraction: float = 0.1
    batches_per_epoch: int | None = None  # None -> ceil(n_train / batch_size)
    eval_batch_size: int = 32

    def _problems(self):
        out = []
        if self.epochs < 1:
            out.append(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            out.append(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay_factor <= 1:
            out.append(f"lr_decay_factor must lie in (0, 1], got {self.lr_decay_factor}")
        if self.lr_decay_period < 1:
            out.append("lr_decay_period must be >= 1")
        if self.lr_floor < 0:
            out.append("lr_floor must be non-negative")
        if not 0 < self.val_fraction < 1:
            out.append("val_fraction must lie in (0, 1)")
        if self.batches_per_epoch is not None and self.batches_per_epoch < 1:
            out.append("batches_per_epoch must be >= 1")
        if self.eval_batch_size < 1:
            out.append("eval_batch_size must be >= 1")
        return out


@dataclass(frozen=True)
class SynthConfig(_Section):
    image_size: int = 512
    n_organoids: tuple[int, int] = (0, 30)
    organoid_p: float = 0.12  # success probability of the geometric count law
    radius: tuple[float, float] = (10.0, 26.0)
    viability: tuple[float, float] = (0.0, 1.0)
    atp_per_area: float = 20.0
    n_impurities: tuple[int, int] = (0, 12)
    impurity_radius: tuple[float, float] = (1.0, 2.5)
    n_vacuoles: tuple[int, int] = (0, 6)
    vacuole_radius: tuple[float, float] = (5.0, 12.0)
    noise_sigma: float = 0.02
    atp_max: float = 400_000.0
    group_size: int = 5
    seed: int = 0

    def _problems(self):
        out = []
        if self.image_size < 32:
            out.append("image_size must be >= 32")
        for name in ("n_organoids", "radius", "viability", "n_impurities",
                     "impurity_radius", "n_vacuoles", "vacuole_radius"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                out.append(f"{name} must be a range (low, high) with 0 <= low <= high")
        if self.viability[1] > 1:
            out.append("viability range must lie within [0, 1]")
        if not 0 < self.organoid_p <= 1:
            out.append("organoid_p must lie in (0, 1]")
        if not self.atp_per_area > 0:
            out.append("atp_per_area must be positive")
        if self.noise_sigma < 0:
            out.append("noise_sigma must be non-negative")
        if not self.atp_max > 0:
            out.append("atp_max must be positive")
        if self.group_size < 0:
            out.append("group_size must be >= 0 (0 disables groups)")
        return out


SECTIONS: dict[str, type] = {
    "codec": CodecConfig,
    "model": ModelConfig,
    "loss": LossConfig,
    "sampler": SamplerConfig,
    "augment": AugmentConfig,
    "train": TrainConfig,
    "synth": SynthConfig,
}


@dataclass(frozen=True)
class RunConfig:
    codec: CodecConfig = field(default_factory=CodecConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        problems = []
        if not self.codec.covers_atp_max:
            problems.append(
                f"codec: n_bits={self.codec.n_bits} cannot represent atp_max={self.codec.atp_max} "
                f"at r_bin={self.codec.r_bin}"
            )
        if problems:
            raise ConfigError(problems)

    @property
    def sampler_r_bin(self) -> float:
        return self.sampler.r_bin if self.sampler.r_bin is not None else self.codec.r_bin

    def to_dict(self) -> dict[str, Any]:
        def plain(v):
            return list(v) if isinstance(v, tuple) else v

        return {
            name: {k: plain(v) for k, v in dataclasses.asdict(getattr(self, name)).items()}
            for name in SECTIONS
        }

    def replace(self, **sections: dict[str, Any]) -> "RunConfig":
        """Return a copy with the given section fields overridden."""
        d = self.to_dict()
        for name, values in sections.items():
            d.setdefault(name, {}).update(values)
        return RunConfig.from_dict(d)

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "RunConfig":
        data = dict(data or {})
        errors: list[str] = []
        built: dict[str, Any] = {}
        for key in data:
            if key not in SECTIONS:
                errors.append(f"unknown section {key!r} (expected one of {sorted(SECTIONS)})")
        for name, section_cls in SECTIONS.items():
            raw = data.get(name) or {}
            if not isinstance(raw, dict):
                errors.append(f"section {name!r} must be a mapping")
                continue
            try:
                built[name] = _build_section(name, section_cls, raw)
            except ConfigError as exc:
                errors.extend(exc.errors)
        if errors:
            raise ConfigError(errors)
        try:
            return cls(**built)
        except ConfigError as exc:
            raise ConfigError(exc.errors) from None


def _coerce(name: str, default: Any, value: Any) -> Any:
    if value is None:
        return value
    if default is None:  # optional numeric fields
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name} must be a number or null, got {value!r}")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"{name} must be a boolean, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"{name} must be a list, got {value!r}")
        return tuple(_coerce(name, default[0] if default else value[0], v) for v in value)
    if isinstance(default, int) and not isinstance(value, bool):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int):
            raise TypeError(f"{name} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{name} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str) and not isinstance(value, str):
        raise TypeError(f"{name} must be a string, got {value!r}")
    return value


def _build_section(section: str, section_cls: type, raw: dict[str, Any]):
    fields = {f.name: f for f in dataclasses.fields(section_cls)}
    proto = section_cls()
    errors: list[str] = []
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in fields:
            errors.append(f"{section}: unknown key {key!r}")
            continue
        try:
            kwargs[key] = _coerce(f"{section}.{key}", getattr(proto, key), value)
        except TypeError as exc:
            errors.append(str(exc))
    if errors:
        raise ConfigError(errors)
    try:
        return section_cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(exc.errors) from None
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"{section}: {exc}"]) from None


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    data = yaml.safe_load(text)
    if data is not None and not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)


def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply ``section.key=value`` overrides; values are parsed as YAML."""
    d = cfg.to_dict()
    errors = []
    for item in assignments:
        lhs, sep, rhs = item.partition("=")
        section, dot, key = lhs.strip().partition(".")
        if not sep or not dot or not key:
            errors.append(f"override {item!r} is not of the form section.key=value")
            continue
        d.setdefault(section, {})[key] = yaml.safe_load(rhs)
    if errors:
        raise ConfigError(errors)
    return RunConfig.from_dict(d)


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
