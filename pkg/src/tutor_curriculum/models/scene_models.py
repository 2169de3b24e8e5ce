"""
Scene, density-map and recipe models

AnnotatedScene and DensityMap carry tensors and are plain dataclasses;
SceneRecipe is a validated pydantic model because it is read from config
files and flags.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from tutor_curriculum.core.tensor import Tensor


Point = Tuple[float, float]


@dataclass
class AnnotatedScene:
    """An image (1×C×H×W, values in [0, 1]) plus its head-point annotations"""
    image: Tensor
    points: List[Point]
    scene_id: str

    @property
    def height(self) -> int:
        return self.image.shape[2]

    @property
    def width(self) -> int:
        return self.image.shape[3]

    @property
    def channels(self) -> int:
        return self.image.shape[1]

    @property
    def count(self) -> int:
        return len(self.points)

    def validate(self) -> "AnnotatedScene":
        """
        Check the scene invariants

        Raises:
            ValueError: image not 1×C×H×W, pixel values outside [0, 1], or a
                point outside [0, W) × [0, H)
        """
        if self.image.ndim != 4 or self.image.shape[0] != 1:
            raise ValueError(f"Scene '{self.scene_id}' image must be 1×C×H×W, got {self.image.shape}")
        data = self.image.data
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise ValueError(f"Scene '{self.scene_id}' pixel values must lie in [0, 1]")
        for index, (x, y) in enumerate(self.points):
            if not (0.0 <= x < self.width and 0.0 <= y < self.height):
                raise ValueError(
                    f"Scene '{self.scene_id}' point {index} ({x}, {y}) lies outside "
                    f"[0, {self.width}) × [0, {self.height})"
                )
        return self


@dataclass
class DensityMap:
    """Non-negative 1×1×h×w grid whose sum divided by the scale factor is the count"""
    grid: Tensor
    scale_factor: float
    sigma: float
    downsample: int

    @property
    def height(self) -> int:
        return self.grid.shape[2]

    @property
    def width(self) -> int:
        return self.grid.shape[3]

    @property
    def count(self) -> float:
        """Object count encoded by the map (integral divided by the scale factor)"""
        return float(self.grid.data.sum()) / self.scale_factor

    @property
    def peak(self) -> float:
        return float(self.grid.data.max()) if self.grid.size else 0.0


@dataclass(frozen=True)
class HistogramBin:
    """One equal-width histogram bin [lower, upper) holding ``count`` values"""
    lower: float
    upper: float
    count: int


@dataclass(frozen=True)
class GroupDistance:
    """A rounded value group and its distance to the unweighted mean of all groups"""
    group_value: float
    distance: float


class BackgroundTexture(str, Enum):
    """Background rendering for synthetic scenes"""
    FLAT = "flat"
    NOISE = "noise"


class SceneRecipe(BaseModel):
    """Parameters of the synthetic crowd-scene generator"""
    model_config = ConfigDict(frozen=True)

    width: int = Field(default=64, gt=0)
    height: int = Field(default=64, gt=0)
    n_points_range: Tuple[int, int] = (5, 30)
    cluster_count_range: Tuple[int, int] = (1, 3)
    cluster_spread: float = Field(default=6.0, ge=0.0)
    blob_radius_range: Tuple[float, float] = (1.5, 3.0)
    background_texture: BackgroundTexture = BackgroundTexture.NOISE
    noise_sigma: float = Field(default=0.05, ge=0.0)
    background_level: float = Field(default=0.8, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_ranges(self) -> "SceneRecipe":
        if self.width % 8 or self.height % 8:
            raise ValueError(f"Recipe dims must be divisible by 8, got {self.width}x{self.height}")
        for name in ("n_points_range", "cluster_count_range", "blob_radius_range"):
            low, high = getattr(self, name)
            if low > high:
                raise ValueError(f"{name} must satisfy min <= max, got ({low}, {high})")
            if low < 0:
                raise ValueError(f"{name} must be non-negative, got ({low}, {high})")
        if self.cluster_count_range[0] < 1:
            raise ValueError("cluster_count_range minimum must be at least 1")
        if self.blob_radius_range[0] <= 0:
            raise ValueError("blob_radius_range minimum must be positive")
        return self

    @classmethod
    def preset(cls, name: str, seed: Optional[int] = None) -> "SceneRecipe":
        """
        Named recipes

        ``desk``: 64×64 training frames.
        ``sparse-1024``: 1024×1024 sparse clustered frames whose unscaled
        density maps show the pixel-value imbalance of real surveillance data
        (almost every pixel near zero, peak around 1e-3).
        """
        presets = {
            "desk": {},
            "sparse-1024": {
                "width": 1024,
                "height": 1024,
                "n_points_range": (10, 30),
                "cluster_count_range": (2, 5),
                "cluster_spread": 12.0,
                "blob_radius_range": (4.0, 8.0),
            },
        }
        if name not in presets:
            raise ValueError(f"Unknown recipe preset '{name}'; expected one of {sorted(presets)}")
        values = dict(presets[name])
        if seed is not None:
            values["seed"] = seed
        return cls(**values)


@dataclass
class SceneDataset:
    """An ordered collection of scenes, e.g. one split of a generated dataset"""
    scenes: List[AnnotatedScene] = field(default_factory=list)
    name: str = "dataset"

    def __len__(self) -> int:
        return len(self.scenes)

    def __iter__(self):
        return iter(self.scenes)

    @property
    def scene_ids(self) -> List[str]:
        return [scene.scene_id for scene in self.scenes]
