"""
Configuration management for TutorNet curriculum training

Environment-based settings via pydantic-settings, one class per concern,
plus the flat ``key=value`` run-config file read by the CLI. Precedence is
defaults < environment < config file < CLI flags.
"""

import logging
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from tutor_curriculum.exceptions import ConfigurationError
from tutor_curriculum.models.curriculum_models import CurriculumParams
from tutor_curriculum.models.scene_models import BackgroundTexture, SceneRecipe
from tutor_curriculum.models.training_models import OptimizerKind, TrainConfig, TrainingMode
from tutor_curriculum.services.networks import MAIN_NET_KINDS, TUTOR_DEPTHS, main_net_spec, tutornet_spec


PathLike = Union[str, Path]


class LoggingConfig(BaseSettings):
    """Logging configuration settings"""
    model_config = SettingsConfigDict(env_prefix="LOG_", case_sensitive=False)

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class PerformanceConfig(BaseSettings):
    """Worker pool and caching configuration"""
    model_config = SettingsConfigDict(env_prefix="PERFORMANCE_", case_sensitive=False)

    max_workers: int = Field(default=4, ge=1)
    enable_caching: bool = True
    cache_max_entries: int = Field(default=4096, ge=1)
    log_summary: bool = True


class CurriculumSettings(BaseSettings):
    """Curriculum hyperparameters"""
    model_config = SettingsConfigDict(env_prefix="TUTORNET_CURRICULUM_", case_sensitive=False)

    t: float = 0.5
    margin: float = 0.8
    scale_factor: float = 1000.0
    alpha_tutor: float = 1e-3
    alpha_main: float = 1e-2

    def to_params(self) -> CurriculumParams:
        return CurriculumParams(
            T=self.t,
            M=self.margin,
            scale_factor=self.scale_factor,
            alpha_tutor=self.alpha_tutor,
            alpha_main=self.alpha_main,
        )


class RecipeSettings(BaseSettings):
    """Synthetic scene recipe; unset fields fall back to the preset"""
    model_config = SettingsConfigDict(env_prefix="TUTORNET_RECIPE_", case_sensitive=False)

    preset: Literal["desk", "sparse-1024"] = "desk"
    width: Optional[int] = None
    height: Optional[int] = None
    n_points_min: Optional[int] = None
    n_points_max: Optional[int] = None
    clusters_min: Optional[int] = None
    clusters_max: Optional[int] = None
    cluster_spread: Optional[float] = None
    blob_radius_min: Optional[float] = None
    blob_radius_max: Optional[float] = None
    background_texture: Optional[BackgroundTexture] = None
    noise_sigma: Optional[float] = None
    background_level: Optional[float] = None
    seed: int = 0

    def to_recipe(self) -> SceneRecipe:
        base = SceneRecipe.preset(self.preset, seed=self.seed).model_dump()
        ranges = {
            "n_points_range": ("n_points_min", "n_points_max"),
            "cluster_count_range": ("clusters_min", "clusters_max"),
            "blob_radius_range": ("blob_radius_min", "blob_radius_max"),
        }
        for target, (low_name, high_name) in ranges.items():
            low, high = base[target]
            low = getattr(self, low_name) if getattr(self, low_name) is not None else low
            high = getattr(self, high_name) if getattr(self, high_name) is not None else high
            base[target] = (low, high)
        for name in ("width", "height", "cluster_spread", "background_texture", "noise_sigma", "background_level"):
            value = getattr(self, name)
            if value is not None:
                base[name] = value
        return SceneRecipe(**base)


class TrainingSettings(BaseSettings):
    """Training run settings"""
    model_config = SettingsConfigDict(env_prefix="TUTORNET_TRAINING_", case_sensitive=False)

    epochs: int = 5
    seed: int = 0
    mode: str = TrainingMode.SF_PLUS_TUTORNET.value
    main_net: str = "dense-tiny"
    tutor_depth: int = 15
    width_multiplier: str = "1/8"
    optimizer: OptimizerKind = OptimizerKind.SGD
    momentum: float = 0.9
    max_grad_norm: Optional[float] = 10.0
    checkpoint_every: int = 0
    sigma: float = 15.0

    @field_validator("mode")
    @classmethod
    def validate_mode(cls, value: str) -> str:
        return TrainingMode.parse(value).value

    @field_validator("main_net")
    @classmethod
    def validate_main_net(cls, value: str) -> str:
        if value not in MAIN_NET_KINDS:
            raise ValueError(f"main_net must be one of {MAIN_NET_KINDS}, got '{value}'")
        return value

    @field_validator("tutor_depth")
    @classmethod
    def validate_tutor_depth(cls, value: int) -> int:
        if value not in TUTOR_DEPTHS:
            raise ValueError(f"tutor_depth must be one of {TUTOR_DEPTHS}, got {value}")
        return value

    @field_validator("width_multiplier")
    @classmethod
    def validate_width(cls, value: str) -> str:
        try:
            multiplier = Fraction(str(value).strip())
        except (ValueError, ZeroDivisionError):
            raise ValueError(f"width_multiplier must be a fraction such as 1/8, got '{value}'") from None
        if multiplier <= 0:
            raise ValueError("width_multiplier must be positive")
        return str(multiplier)

    @property
    def width_fraction(self) -> Fraction:
        return Fraction(self.width_multiplier)


class RunSettings(BaseSettings):
    """Everything one CLI invocation needs"""
    model_config = SettingsConfigDict(env_prefix="TUTORNET_", case_sensitive=False, env_nested_delimiter="__")

    curriculum: CurriculumSettings = Field(default_factory=CurriculumSettings)
    recipe: RecipeSettings = Field(default_factory=RecipeSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)

    def train_config(self, checkpoint_dir: Optional[Path] = None, mode: Optional[TrainingMode] = None) -> TrainConfig:
        """
        Assemble a validated TrainConfig

        Raises:
            pydantic.ValidationError: invariant violations in any section
            ValueError: widths that produce fractional channel counts
        """
        curriculum = self.curriculum.to_params()
        training = self.training
        run_mode = mode or TrainingMode.parse(training.mode)
        width = training.width_fraction
        tutor_spec = tutornet_spec(training.tutor_depth, width, curriculum.T) if run_mode.uses_tutor else None
        return TrainConfig(
            curriculum=curriculum,
            epochs=training.epochs,
            seed=training.seed,
            mode=run_mode,
            main_spec=main_net_spec(training.main_net, width),
            tutor_spec=tutor_spec,
            optimizer=training.optimizer,
            momentum=training.momentum,
            max_grad_norm=training.max_grad_norm,
            checkpoint_every=training.checkpoint_every,
            checkpoint_dir=checkpoint_dir,
            sigma=training.sigma,
        )


class ApplicationConfig(BaseSettings):
    """Process-wide configuration"""
    model_config = SettingsConfigDict(env_file=".env", env_file_encoding="utf-8", case_sensitive=False,
                                      env_nested_delimiter="__", extra="ignore")

    app_name: str = "TutorNet Curriculum"
    app_version: str = "1.0.0"

    logging: LoggingConfig = Field(default_factory=LoggingConfig)
    performance: PerformanceConfig = Field(default_factory=PerformanceConfig)


# Global configuration instance
config = ApplicationConfig()


def get_config() -> ApplicationConfig:
    """Get the global configuration instance"""
    return config


def reload_config() -> ApplicationConfig:
    """Reload configuration from environment"""
    global config
    config = ApplicationConfig()
    return config


def configure_logging(logging_config: Optional[LoggingConfig] = None, level: Optional[str] = None) -> None:
    """Configure the root logger once per process; logs go to stderr"""
    logging_config = logging_config or get_config().logging
    logging.basicConfig(
        level=(level or logging_config.log_level).upper(),
        format=logging_config.log_format,
        stream=sys.stderr,
        force=True,
    )


# ----------------------------------------------------------------------
# Run config file

@dataclass(frozen=True)
class ConfigKey:
    """One documented run-config key and the settings field it feeds"""
    name: str
    section: str
    field: str
    description: str


CONFIG_KEYS: Dict[str, ConfigKey] = {
    key.name: key
    for key in (
        ConfigKey("t", "curriculum", "t", "floor weight T of the weight activation, 0 < T < 1"),
        ConfigKey("margin", "curriculum", "margin", "tutor-loss margin M, M > 0"),
        ConfigKey("scale_factor", "curriculum", "scale_factor", "density-map scale factor s, s > 0 (forced to 1 in baseline mode)"),
        ConfigKey("alpha_tutor", "curriculum", "alpha_tutor", "TutorNet learning rate"),
        ConfigKey("alpha_main", "curriculum", "alpha_main", "main network learning rate"),
        ConfigKey("epochs", "training", "epochs", "number of passes over the training set, >= 1"),
        ConfigKey("seed", "training", "seed", "seed for initialization and per-epoch shuffles"),
        ConfigKey("mode", "training", "mode", "baseline | sf | sf-tn (also sf-only, sf-plus-tutornet)"),
        ConfigKey("main_net", "training", "main_net", f"main network kind: {', '.join(MAIN_NET_KINDS)}"),
        ConfigKey("tutor_depth", "training", "tutor_depth", f"TutorNet depth: {', '.join(map(str, TUTOR_DEPTHS))}"),
        ConfigKey("width_multiplier", "training", "width_multiplier", "channel width multiplier, e.g. 1/8"),
        ConfigKey("optimizer", "training", "optimizer", "sgd | sgd-momentum"),
        ConfigKey("momentum", "training", "momentum", "momentum for sgd-momentum, 0 <= mu < 1"),
        ConfigKey("max_grad_norm", "training", "max_grad_norm", "global gradient-norm clip per network; 'none' disables"),
        ConfigKey("checkpoint_every", "training", "checkpoint_every", "write checkpoints every N epochs (0: final only)"),
        ConfigKey("sigma", "training", "sigma", "Gaussian kernel width of ground-truth density maps, pixels"),
        ConfigKey("recipe_preset", "recipe", "preset", "desk | sparse-1024"),
        ConfigKey("recipe_seed", "recipe", "seed", "seed of the scene generator"),
        ConfigKey("recipe_width", "recipe", "width", "scene width, divisible by 8"),
        ConfigKey("recipe_height", "recipe", "height", "scene height, divisible by 8"),
        ConfigKey("recipe_n_points_min", "recipe", "n_points_min", "fewest head points per scene"),
        ConfigKey("recipe_n_points_max", "recipe", "n_points_max", "most head points per scene"),
        ConfigKey("recipe_clusters_min", "recipe", "clusters_min", "fewest clusters per scene, >= 1"),
        ConfigKey("recipe_clusters_max", "recipe", "clusters_max", "most clusters per scene"),
        ConfigKey("recipe_cluster_spread", "recipe", "cluster_spread", "std of point offsets around a cluster centre"),
        ConfigKey("recipe_blob_radius_min", "recipe", "blob_radius_min", "smallest head blob radius, > 0"),
        ConfigKey("recipe_blob_radius_max", "recipe", "blob_radius_max", "largest head blob radius"),
        ConfigKey("recipe_background_texture", "recipe", "background_texture", "flat | noise"),
        ConfigKey("recipe_noise_sigma", "recipe", "noise_sigma", "std of background noise"),
        ConfigKey("recipe_background_level", "recipe", "background_level", "mean background intensity in [0, 1]"),
    )
}

_NONE_VALUES = {"none", "null", ""}


def parse_run_config(text: str, path: str = "<memory>") -> Dict[str, str]:
    """
    Parse a flat ``key=value`` run-config file

    ``#`` starts a comment; blank lines are ignored.

    Raises:
        ConfigurationError: malformed line, unknown key or duplicate key,
            with the 1-based line number
    """
    values: Dict[str, str] = {}
    seen_at: Dict[str, int] = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}: expected key=value, got '{raw.strip()}'", line_number)
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"{path}: missing key before '='", line_number)
        key = key.lower()
        if key not in CONFIG_KEYS:
            raise ConfigurationError(f"{path}: unknown key '{key}'", line_number)
        if key in values:
            raise ConfigurationError(f"{path}: duplicate key '{key}' (first set on line {seen_at[key]})", line_number)
        values[key] = value
        seen_at[key] = line_number
    return values


def read_run_config(path: PathLike) -> Dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}") from None
    return parse_run_config(text, str(path))


def _section_updates(values: Mapping[str, Any]) -> Dict[str, Dict[str, Any]]:
    updates: Dict[str, Dict[str, Any]] = {"curriculum": {}, "recipe": {}, "training": {}}
    for name, value in values.items():
        if value is None:
            continue
        key = CONFIG_KEYS.get(name)
        if key is None:
            raise ConfigurationError(f"unknown config key '{name}'")
        if isinstance(value, str) and value.strip().lower() in _NONE_VALUES and key.field == "max_grad_norm":
            value = None
        updates[key.section][key.field] = value
    return updates


def apply_overrides(settings: RunSettings, values: Mapping[str, Any]) -> RunSettings:
    """
    Layer values keyed by run-config key names over ``settings``

    Explicitly set fields of each section are kept and overridden; the
    environment is re-read underneath, so it stays below both.
    """
    updates = _section_updates(values)
    sections = {}
    for section, changes in updates.items():
        current = getattr(settings, section)
        explicit = current.model_dump(include=current.model_fields_set)
        sections[section] = type(current)(**{**explicit, **changes})
    return RunSettings(**sections)


def load_run_settings(
    config_path: Optional[PathLike] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunSettings:
    """
    Resolve run settings: defaults < environment < config file < overrides

    Raises:
        ConfigurationError: config file problems
        pydantic.ValidationError: invalid values
    """
    settings = RunSettings()
    if config_path is not None:
        settings = apply_overrides(settings, read_run_config(config_path))
    if overrides:
        settings = apply_overrides(settings, {k: v for k, v in overrides.items() if v is not None})
    return settings


def describe_config_keys(settings: Optional[RunSettings] = None) -> List[Tuple[str, str, str]]:
    """(key, current value, description) rows for ``config-keys`` and ``--help``"""
    settings = settings or RunSettings()
    rows = []
    for key in CONFIG_KEYS.values():
        value = getattr(getattr(settings, key.section), key.field)
        if hasattr(value, "value"):
            value = value.value
        rows.append((key.name, "none" if value is None else str(value), key.description))
    return rows
