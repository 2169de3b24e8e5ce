"""
Curriculum parameter and map models
"""

from dataclasses import dataclass

from pydantic import BaseModel, ConfigDict, Field

from tutor_curriculum.core.tensor import Tensor


class CurriculumParams(BaseModel):
    """
    Hyperparameters of the error-driven curriculum

    Attributes:
        T: floor weight given to well-learned pixels, in (0, 1)
        M: margin of the tutor loss; errors above M/2 raise weights
        scale_factor: multiplier applied to ground-truth density maps
        alpha_tutor: TutorNet learning rate
        alpha_main: main-network learning rate
    """
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    T: float = Field(default=0.5, gt=0.0, lt=1.0, alias="t")
    M: float = Field(default=0.8, gt=0.0, alias="margin")
    scale_factor: float = Field(default=1000.0, gt=0.0)
    alpha_tutor: float = Field(default=1e-3, gt=0.0)
    alpha_main: float = Field(default=1e-2, gt=0.0)


@dataclass
class WeightMap:
    """TutorNet output after the weight activation; values in {T} ∪ (0.5, 1)"""
    grid: Tensor

    @property
    def shape(self):
        return self.grid.shape


@dataclass
class ErrorMap:
    """Detached per-pixel squared error between prediction and ground truth"""
    grid: Tensor

    @property
    def shape(self):
        return self.grid.shape
