"""Run-level configuration models and config-file loading.

Every model rejects unknown keys. A :class:`RunConfig` is assembled from an
optional config file (TOML, JSON or YAML) with command-line overrides merged
on top, and the fully resolved result is written next to each run's outputs.
"""

import json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from src.config.base_config import settings
from src.errors import ConfigurationError

Range = Tuple[float, float]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


def _ordered(value: Range, low: float = 0.0, high: float = 1.0) -> Range:
    lo, hi = value
    if not (low <= lo <= hi <= high):
        raise ValueError(f"range {value} must satisfy {low} <= lo <= hi <= {high}")
    return value


class NetConfig(StrictModel):
    """Shape of the WAU-net. Defaults are the desk-scale configuration."""

    levels: int = Field(3, ge=1)
    filters: List[int] = Field(default_factory=lambda: [8, 16, 32])
    attention_depths: List[int] = Field(default_factory=lambda: [1, 2, 3])
    heads: int = Field(2, ge=1)
    num_classes: int = Field(5, ge=2)
    input_size: int = Field(32, ge=1)
    in_channels: int = Field(1, ge=1)
    use_attention: bool = True
    zero_init_attention: bool = True
    zero_init_head: bool = True
    batch_norm: bool = False
    precision: Literal["float32", "float64"] = "float32"

    @model_validator(mode="after")
    def _check_shape(self) -> "NetConfig":
        if len(self.filters) != self.levels or len(self.attention_depths) != self.levels:
            raise ValueError(
                f"filters ({len(self.filters)}) and attention_depths ({len(self.attention_depths)}) "
                f"must both have {self.levels} entries"
            )
        if any(f < 1 for f in self.filters):
            raise ValueError("filters must be positive")
        if any(d < 0 for d in self.attention_depths):
            raise ValueError("attention_depths must be non-negative")
        if self.input_size % 2 ** (self.levels - 1):
            raise ValueError(f"input_size {self.input_size} not divisible by 2^{self.levels - 1}")
        if self.use_attention:
            bad = [f for f, d in zip(self.filters, self.attention_depths) if d and f % self.heads]
            if bad:
                raise ValueError(f"filters {bad} not divisible by heads={self.heads}")
        return self

    def level_size(self, level: int) -> int:
        return self.input_size // 2**level

    @classmethod
    def full_scale(cls, num_classes: int = 11) -> "NetConfig":
        """Full-size configuration; constructible for shape checks only."""
        return cls(
            levels=5,
            filters=[64, 128, 256, 512, 1024],
            attention_depths=[2, 4, 6, 8, 10],
            heads=8,
            num_classes=num_classes,
            input_size=256,
        )


class OrganRecipe(StrictModel):
    """How one organ class is painted into a phantom.

    Areas are fractions of the image area; centres are (row, col) fractions.
    """

    name: str
    family: Literal["ellipse", "paired", "strip", "ring"]
    intensity: Range
    area: Range
    center: Tuple[float, float]
    jitter: float = Field(0.03, ge=0.0, le=0.5)
    aspect: Range = (0.6, 1.6)
    thickness: float = Field(0.07, gt=0.0, lt=0.5)

    @field_validator("intensity", "area")
    @classmethod
    def _check_unit_range(cls, value: Range) -> Range:
        return _ordered(value)

    @field_validator("aspect")
    @classmethod
    def _check_aspect(cls, value: Range) -> Range:
        return _ordered(value, 0.05, 20.0)

    def pixel_range(self, size: int) -> Tuple[int, int]:
        total = size * size
        low = max(1, int(round(self.area[0] * total)))
        return low, int(self.area[1] * total)


class PhantomSpec(StrictModel):
    size: int = Field(32, ge=4)
    num_organs: int = Field(4, ge=1, le=10)
    seed: int = 0
    noise_std: float = Field(0.02, ge=0.0)
    background: float = Field(0.3, ge=0.0, le=1.0)
    spacing: Tuple[float, float] = (1.0, 1.0)
    recipes: Optional[List[OrganRecipe]] = None

    @field_validator("spacing")
    @classmethod
    def _positive_spacing(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        if min(value) <= 0:
            raise ValueError("spacing components must be positive")
        return value

    @model_validator(mode="after")
    def _recipes_match(self) -> "PhantomSpec":
        if self.recipes is not None and len(self.recipes) != self.num_organs:
            raise ValueError(f"{len(self.recipes)} recipes given for num_organs={self.num_organs}")
        return self

    def organ_recipes(self) -> List[OrganRecipe]:
        from src.config.organs import default_recipes

        return list(self.recipes) if self.recipes is not None else default_recipes(self.num_organs)


class AugmentParams(StrictModel):
    """Bounds for random shift, rotation and flips; magnitudes are drawn per call."""

    max_shift: Optional[float] = Field(None, ge=0.0, description="pixels; None means 10% of size")
    max_rotation: float = Field(15.0, ge=0.0, le=180.0, description="degrees")
    flip_h: bool = True
    flip_v: bool = True
    flip_prob: float = Field(0.5, ge=0.0, le=1.0)
    seed: int = 0

    def shift_bound(self, size: int) -> float:
        return 0.1 * size if self.max_shift is None else self.max_shift

    @classmethod
    def identity(cls, seed: int = 0) -> "AugmentParams":
        return cls(max_shift=0.0, max_rotation=0.0, flip_h=False, flip_v=False, seed=seed)


class SplitRatios(StrictModel):
    train: float = Field(0.7, ge=0.0, le=1.0)
    val: float = Field(0.1, ge=0.0, le=1.0)
    test: float = Field(0.2, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _sum_to_one(self) -> "SplitRatios":
        if abs(self.train + self.val + self.test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        return self


class GenConfig(StrictModel):
    cases: int = Field(16, ge=1)
    phantom: PhantomSpec = Field(default_factory=PhantomSpec)
    split: SplitRatios = Field(default_factory=SplitRatios)
    folds: int = Field(5, ge=2)


class TrainConfig(StrictModel):
    lr0: float = Field(1e-3, gt=0.0)
    poly_power: float = Field(0.9, ge=0.0)
    total_steps: int = Field(300, ge=1)
    batch_size: int = Field(2, ge=1)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = 0
    eval_every: int = Field(0, ge=0, description="steps between validation reports; 0 disables")
    checkpoint_every: int = Field(0, ge=0, description="steps between checkpoints; 0 writes only the final one")
    checkpoint_dir: Optional[str] = None
    split: Literal["train", "val", "test", "all"] = "train"
    augment: bool = True
    augment_params: AugmentParams = Field(default_factory=AugmentParams)
    clip_norm: Optional[float] = Field(None, gt=0.0)
    early_stop_patience: Optional[int] = Field(None, ge=1, description="steps without validation DSC gain")
    freeze_attention: bool = False
    folds: int = Field(5, ge=2)
    cross_validation: bool = False
    resume_from: Optional[str] = None


class EvalConfig(StrictModel):
    split: Literal["train", "val", "test", "all"] = "test"
    checkpoint: Optional[str] = None
    overlay_format: Literal["png", "ppm"] = "png"
    cases: Optional[List[int]] = None


class BenchConfig(StrictModel):
    sizes: List[int] = Field(default_factory=lambda: [8, 16, 32, 64])
    full_max_size: int = Field(32, ge=1)
    channels: int = Field(8, ge=1)
    heads: int = Field(2, ge=1)
    batch: int = Field(1, ge=1)
    repeats: int = Field(3, ge=1)
    slope_tolerance: float = Field(0.2, gt=0.0)
    enforce_slopes: bool = True

    @model_validator(mode="after")
    def _check(self) -> "BenchConfig":
        if not self.sizes or any(s < 1 for s in self.sizes):
            raise ValueError("sizes must be a non-empty list of positive extents")
        if self.channels % self.heads:
            raise ValueError(f"channels {self.channels} not divisible by heads {self.heads}")
        return self


class GradcheckConfig(StrictModel):
    eps: float = Field(default_factory=lambda: settings.gradcheck_eps, gt=0.0)
    samples: int = Field(default_factory=lambda: settings.gradcheck_samples, ge=1)
    primitive_tol: float = Field(default_factory=lambda: settings.gradcheck_primitive_tol, gt=0.0)
    network_tol: float = Field(default_factory=lambda: settings.gradcheck_network_tol, gt=0.0)


Command = Literal["gen", "train", "eval", "predict", "gradcheck", "bench"]


class RunConfig(StrictModel):
    command: Command
    out: str
    seed: int = 0
    force: bool = False
    data: Optional[str] = None
    net: NetConfig = Field(default_factory=NetConfig)
    gen: GenConfig = Field(default_factory=GenConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    gradcheck: GradcheckConfig = Field(default_factory=GradcheckConfig)


def load_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Parse a TOML, JSON or YAML config file into a plain dict."""
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            data = tomllib.loads(text)
        elif suffix == ".json":
            data = json.loads(text)
        elif suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            raise ConfigurationError(f"{path}: unsupported config format {suffix!r}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def _deep_merge(base: Mapping[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _deep_merge(merged[key], value)
        elif isinstance(value, Mapping):
            merged[key] = _deep_merge({}, value)
        else:
            merged[key] = value
    return merged


def format_validation_error(exc: ValidationError) -> str:
    parts = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"]) or "<root>"
        parts.append(f"{location}: {error['msg']}")
    return "; ".join(parts)


def resolve_run_config(
    command: str, file_data: Mapping[str, Any], overrides: Mapping[str, Any]
) -> RunConfig:
    """Merge ``overrides`` onto ``file_data`` and validate the result."""
    merged = _deep_merge(file_data, overrides)
    merged["command"] = command
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigurationError(f"invalid configuration: {format_validation_error(exc)}") from None


def write_resolved_config(config: RunConfig, out_dir: str) -> Path:
    """Write resolved_config.json; ``force`` belongs to the invocation and is not persisted."""
    path = Path(out_dir) / "resolved_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.model_dump(mode="json", exclude={"force"}), indent=2, sort_keys=True) + "\n")
    return path
