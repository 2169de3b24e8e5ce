"""
Synthetic crowd scenes

Each scene is a pure function of (recipe, index): cluster centres are drawn
uniformly, people are scattered around them with Gaussian spread (points
falling outside the frame are re-drawn) and rendered as dark radial blobs on
a flat or noisy background. Grayscale is replicated to three channels and
quantized to k/255 so scenes survive the 8-bit PPM round trip exactly.
"""

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from tutor_curriculum.core.concurrent_processing import map_in_order
from tutor_curriculum.core.performance import performance_timer
from tutor_curriculum.core.tensor import DTYPE, Tensor
from tutor_curriculum.models.scene_models import (
    AnnotatedScene,
    BackgroundTexture,
    Point,
    SceneDataset,
    SceneRecipe,
)
from tutor_curriculum.services.file_formats import read_manifest, read_scene, write_manifest, write_scene


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BLOB_DARKNESS = 0.6
MAX_REDRAWS = 1000


def scene_id_for(index: int) -> str:
    return f"scene_{index:05d}"


def _draw_point(rng: np.random.Generator, centre: Tuple[float, float], spread: float, recipe: SceneRecipe) -> Point:
    for _ in range(MAX_REDRAWS):
        x = centre[0] + rng.normal(0.0, spread) if spread > 0 else centre[0]
        y = centre[1] + rng.normal(0.0, spread) if spread > 0 else centre[1]
        if 0.0 <= x < recipe.width and 0.0 <= y < recipe.height:
            return float(x), float(y)
    return centre


def _render(rng: np.random.Generator, recipe: SceneRecipe, points: Sequence[Point]) -> np.ndarray:
    height, width = recipe.height, recipe.width
    if recipe.background_texture is BackgroundTexture.NOISE:
        canvas = recipe.background_level + rng.normal(0.0, recipe.noise_sigma, size=(height, width))
    else:
        canvas = np.full((height, width), recipe.background_level, dtype=DTYPE)

    low, high = recipe.blob_radius_range
    for x, y in points:
        radius = rng.uniform(low, high) if high > low else low
        reach = 3.0 * radius
        col_lo, col_hi = max(0, int(x - reach)), min(width, int(x + reach) + 1)
        row_lo, row_hi = max(0, int(y - reach)), min(height, int(y + reach) + 1)
        cols = np.arange(col_lo, col_hi) + 0.5 - x
        rows = np.arange(row_lo, row_hi) + 0.5 - y
        profile = np.exp(-(rows[:, None] ** 2 + cols[None, :] ** 2) / (2.0 * radius ** 2))
        canvas[row_lo:row_hi, col_lo:col_hi] -= BLOB_DARKNESS * profile

    gray = np.rint(np.clip(canvas, 0.0, 1.0) * 255.0) / 255.0
    return np.repeat(gray[None, None], 3, axis=1)


def generate_scene(recipe: SceneRecipe, index: int) -> AnnotatedScene:
    """Deterministic scene ``index`` of a recipe"""
    rng = np.random.default_rng([recipe.seed, index])
    n_points = int(rng.integers(recipe.n_points_range[0], recipe.n_points_range[1] + 1))
    n_clusters = int(rng.integers(recipe.cluster_count_range[0], recipe.cluster_count_range[1] + 1))
    centres = [(rng.uniform(0, recipe.width), rng.uniform(0, recipe.height)) for _ in range(n_clusters)]

    points: List[Point] = []
    for _ in range(n_points):
        centre = centres[int(rng.integers(0, n_clusters))]
        points.append(_draw_point(rng, centre, recipe.cluster_spread, recipe))

    image = _render(rng, recipe, points)
    return AnnotatedScene(image=Tensor(image), points=points, scene_id=scene_id_for(index)).validate()


@performance_timer("generate_dataset")
def generate_dataset(
    recipe: SceneRecipe,
    count: int,
    start_index: int = 0,
    max_workers: int = 4,
    name: str = "dataset",
) -> SceneDataset:
    """Scenes ``start_index .. start_index + count - 1``, generated in parallel, returned in index order"""
    if count < 0:
        raise ValueError(f"count must be non-negative, got {count}")
    indices = list(range(start_index, start_index + count))
    scenes = map_in_order(lambda i: generate_scene(recipe, i), indices, max_workers=max_workers, label="scene")
    return SceneDataset(scenes=scenes, name=name)


def parse_split(text: str) -> List[Tuple[str, int]]:
    """
    Parse ``name:count[,name:count...]``

    Raises:
        ValueError: malformed entries, duplicate names or negative counts
    """
    splits: List[Tuple[str, int]] = []
    for entry in text.split(","):
        name, sep, value = entry.strip().partition(":")
        if not sep or not name or not value.strip().isdigit():
            raise ValueError(f"Malformed split entry '{entry}'; expected name:count")
        if name in {existing for existing, _ in splits}:
            raise ValueError(f"Duplicate split name '{name}'")
        splits.append((name, int(value)))
    return splits


def write_dataset(directory: PathLike, dataset: SceneDataset, max_workers: int = 4) -> Path:
    """Write every scene pair and the manifest"""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    map_in_order(lambda scene: write_scene(root, scene), dataset.scenes, max_workers=max_workers, label="write")
    manifest = write_manifest(root, dataset.scene_ids)
    logger.info(f"Wrote {len(dataset)} scenes to {root}")
    return manifest


def generate_splits(
    recipe: SceneRecipe,
    splits: Sequence[Tuple[str, int]],
    out_dir: PathLike,
    max_workers: int = 4,
) -> List[Tuple[str, int, Path]]:
    """Write each split under ``out_dir/<name>`` with disjoint, consecutive index ranges"""
    written = []
    start = 0
    for name, count in splits:
        dataset = generate_dataset(recipe, count, start_index=start, max_workers=max_workers, name=name)
        manifest = write_dataset(Path(out_dir) / name, dataset, max_workers=max_workers)
        written.append((name, count, manifest))
        start += count
    return written


@performance_timer("load_dataset")
def load_dataset(directory: PathLike, max_workers: int = 4, name: Optional[str] = None) -> SceneDataset:
    """
    Read every scene listed in ``directory/manifest.txt``

    Raises:
        FileNotFoundError: missing manifest or scene file
        AnnotationParseError: malformed scene files
    """
    root = Path(directory)
    scene_ids = read_manifest(root)
    scenes = map_in_order(lambda scene_id: read_scene(root, scene_id), scene_ids, max_workers=max_workers, label="read")
    logger.info(f"Loaded {len(scenes)} scenes from {root}")
    return SceneDataset(scenes=scenes, name=name or root.name)
