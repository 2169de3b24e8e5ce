"""
Training configuration and telemetry models
"""

from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from tutor_curriculum.models.curriculum_models import CurriculumParams, ErrorMap
from tutor_curriculum.models.network_models import NetworkParams, NetworkSpec


class TrainingMode(str, Enum):
    """Ablation modes: no scale factor, scale factor only, scale factor plus TutorNet"""
    BASELINE = "baseline"
    SF_ONLY = "sf-only"
    SF_PLUS_TUTORNET = "sf-plus-tutornet"

    @classmethod
    def parse(cls, value: str) -> "TrainingMode":
        """Accept the canonical names and the short CLI forms ``sf`` / ``sf-tn``"""
        aliases = {"sf": cls.SF_ONLY, "sf-tn": cls.SF_PLUS_TUTORNET}
        normalized = value.strip().lower()
        if normalized in aliases:
            return aliases[normalized]
        try:
            return cls(normalized)
        except ValueError:
            raise ValueError(
                f"Unknown mode '{value}'; expected baseline, sf, sf-tn, sf-only or sf-plus-tutornet"
            ) from None

    @property
    def uses_tutor(self) -> bool:
        return self is TrainingMode.SF_PLUS_TUTORNET


class OptimizerKind(str, Enum):
    SGD = "sgd"
    SGD_MOMENTUM = "sgd-momentum"


class TrainConfig(BaseModel):
    """
    Everything the trainer needs for one run

    Mode contract: ``baseline`` forces the scale factor to 1 and drops
    TutorNet; ``sf-only`` drops TutorNet (unit weights); ``sf-plus-tutornet``
    requires a tutor spec.
    """
    model_config = ConfigDict(arbitrary_types_allowed=True)

    curriculum: CurriculumParams = Field(default_factory=CurriculumParams)
    epochs: int = Field(default=5, ge=1)
    seed: int = 0
    mode: TrainingMode = TrainingMode.SF_PLUS_TUTORNET
    main_spec: NetworkSpec
    tutor_spec: Optional[NetworkSpec] = None
    optimizer: OptimizerKind = OptimizerKind.SGD
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    max_grad_norm: Optional[float] = Field(default=10.0, gt=0.0)
    checkpoint_every: int = Field(default=0, ge=0)
    checkpoint_dir: Optional[Path] = None
    sigma: float = Field(default=15.0, gt=0.0)
    downsample: int = 8

    @model_validator(mode="after")
    def apply_mode_contract(self) -> "TrainConfig":
        if self.downsample not in (1, 2, 4, 8):
            raise ValueError(f"downsample must be one of 1, 2, 4, 8, got {self.downsample}")
        if self.main_spec.downsampling != self.downsample:
            raise ValueError(
                f"main network downsampling {self.main_spec.downsampling} does not match "
                f"ground-truth downsample {self.downsample}"
            )
        if self.mode is TrainingMode.BASELINE and self.curriculum.scale_factor != 1.0:
            self.curriculum = self.curriculum.model_copy(update={"scale_factor": 1.0})
        if not self.mode.uses_tutor:
            self.tutor_spec = None
        elif self.tutor_spec is None:
            raise ValueError("mode sf-plus-tutornet requires a tutor_spec")
        elif self.tutor_spec.downsampling != self.downsample:
            raise ValueError(
                f"TutorNet downsampling {self.tutor_spec.downsampling} does not match "
                f"ground-truth downsample {self.downsample}"
            )
        elif self.tutor_spec.final_activation is not None and \
                self.tutor_spec.final_activation.floor_weight != self.curriculum.T:
            raise ValueError(
                f"TutorNet floor weight {self.tutor_spec.final_activation.floor_weight} does not match "
                f"T = {self.curriculum.T}"
            )
        return self

    def with_updates(self, **updates) -> "TrainConfig":
        """A re-validated copy with some fields replaced (``model_copy`` skips validation)"""
        values = {name: getattr(self, name) for name in type(self).model_fields}
        values.update(updates)
        return type(self)(**values)

    @property
    def scale_factor(self) -> float:
        return self.curriculum.scale_factor

    @property
    def effective_momentum(self) -> float:
        return self.momentum if self.optimizer is OptimizerKind.SGD_MOMENTUM else 0.0


TELEMETRY_COLUMNS = [
    "epoch", "step", "main_loss", "tutor_loss", "mean_weight", "min_weight", "max_weight", "mean_error",
]


@dataclass(frozen=True)
class StepRecord:
    """Telemetry for one training step; tutor and weight fields are None without TutorNet"""
    epoch: int
    step: int
    main_loss: float
    tutor_loss: Optional[float]
    mean_weight: Optional[float]
    min_weight: Optional[float]
    max_weight: Optional[float]
    mean_error: float

    def to_row(self) -> Dict[str, Optional[float]]:
        return asdict(self)


@dataclass(frozen=True)
class SceneCount:
    scene_id: str
    pred_count: float
    gt_count: float

    @property
    def absolute_error(self) -> float:
        return abs(self.pred_count - self.gt_count)


@dataclass
class EvaluationResult:
    """Dataset-level MAE and root-mean-square count error plus per-scene counts"""
    mae: float
    mse: float
    counts: List[SceneCount] = field(default_factory=list)
    error_maps: List[ErrorMap] = field(default_factory=list)


@dataclass
class TrainingResult:
    """Final parameters and telemetry; ``diagnostic`` is set when training diverged"""
    main_params: NetworkParams
    tutor_params: Optional[NetworkParams]
    records: List[StepRecord]
    diagnostic: Optional[str] = None

    @property
    def diverged(self) -> bool:
        return self.diagnostic is not None
