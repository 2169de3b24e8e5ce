"""
Ground-truth density maps and density-distribution analyses

Maps are generated directly at the network output resolution: each point
contributes a truncated isotropic Gaussian of standard deviation
``sigma / downsample`` cells, evaluated at cell centres and renormalized over
its in-image support so every point carries unit mass. The unit-mass grid is
then multiplied by the scale factor.
"""

import logging
from typing import List, Sequence

import numpy as np

from tutor_curriculum.core.tensor import DTYPE, Tensor
from tutor_curriculum.models.scene_models import (
    AnnotatedScene,
    DensityMap,
    GroupDistance,
    HistogramBin,
)


logger = logging.getLogger(__name__)

ALLOWED_DOWNSAMPLE = (1, 2, 4, 8)
TRUNCATION_RADIUS = 4.0
GROUP_DECIMALS = 4


def _unit_density_grid(scene: AnnotatedScene, sigma: float, downsample: int) -> np.ndarray:
    height, width = scene.height // downsample, scene.width // downsample
    grid = np.zeros((height, width), dtype=DTYPE)
    cell_sigma = sigma / downsample
    radius = TRUNCATION_RADIUS * cell_sigma

    for x, y in scene.points:
        cx, cy = x / downsample, y / downsample
        col_lo = max(0, int(np.floor(cx - radius)))
        col_hi = min(width, int(np.ceil(cx + radius)) + 1)
        row_lo = max(0, int(np.floor(cy - radius)))
        row_hi = min(height, int(np.ceil(cy + radius)) + 1)

        cols = np.arange(col_lo, col_hi, dtype=DTYPE) + 0.5 - cx
        rows = np.arange(row_lo, row_hi, dtype=DTYPE) + 0.5 - cy
        dist_sq = rows[:, None] ** 2 + cols[None, :] ** 2
        kernel = np.exp(-dist_sq / (2.0 * cell_sigma ** 2))
        kernel[dist_sq > radius ** 2] = 0.0

        mass = kernel.sum()
        if mass <= 0.0:
            # Kernel narrower than a cell: all mass goes to the containing cell
            grid[min(int(cy), height - 1), min(int(cx), width - 1)] += 1.0
            continue
        grid[row_lo:row_hi, col_lo:col_hi] += kernel / mass

    return grid


def make_density_map(
    scene: AnnotatedScene,
    sigma: float = 15.0,
    downsample: int = 8,
    scale_factor: float = 1000.0,
) -> DensityMap:
    """
    Build the scaled ground-truth density map of a scene

    Args:
        scene: annotated scene; validated before use
        sigma: Gaussian standard deviation in image pixels
        downsample: output resolution divisor, one of 1, 2, 4, 8
        scale_factor: multiplier applied to the unit-mass map

    Returns:
        DensityMap of shape 1×1×(H/downsample)×(W/downsample)

    Raises:
        ValueError: invalid parameters, indivisible image dims or a point
            outside the image
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if downsample not in ALLOWED_DOWNSAMPLE:
        raise ValueError(f"downsample must be one of {ALLOWED_DOWNSAMPLE}, got {downsample}")
    if scale_factor <= 0:
        raise ValueError(f"scale_factor must be positive, got {scale_factor}")
    scene.validate()
    if scene.height % downsample or scene.width % downsample:
        raise ValueError(
            f"Scene '{scene.scene_id}' dims {scene.height}x{scene.width} must be divisible by {downsample}"
        )

    unit = _unit_density_grid(scene, sigma, downsample)
    grid = unit * scale_factor
    return DensityMap(
        grid=Tensor(grid.reshape(1, 1, *grid.shape)),
        scale_factor=float(scale_factor),
        sigma=float(sigma),
        downsample=downsample,
    )


def equal_width_histogram(values: np.ndarray, bins: int) -> List[HistogramBin]:
    """
    Equal-width bins over [0, max(values)]

    An all-zero input yields a single degenerate bin [0, 0] holding every value.
    """
    if bins < 2:
        raise ValueError(f"bins must be at least 2, got {bins}")
    flat = np.asarray(values, dtype=DTYPE).reshape(-1)
    if flat.size and flat.min() < 0:
        raise ValueError("histogram values must be non-negative")
    top = float(flat.max()) if flat.size else 0.0
    if top == 0.0:
        return [HistogramBin(lower=0.0, upper=0.0, count=int(flat.size))]

    counts, edges = np.histogram(flat, bins=bins, range=(0.0, top))
    return [
        HistogramBin(lower=float(edges[i]), upper=float(edges[i + 1]), count=int(counts[i]))
        for i in range(bins)
    ]


def value_histogram(density_map: DensityMap, bins: int = 20) -> List[HistogramBin]:
    """Histogram of the map's pixel values; counts sum to the pixel count"""
    return equal_width_histogram(density_map.grid.data, bins)


def cluster_distance_analysis(density_map: DensityMap) -> List[GroupDistance]:
    """
    Distance of each value group to the mean of all groups

    Pixel values are rounded to four decimals; each distinct rounded value is a
    group. Group sizes are ignored: the mean is the plain mean of the distinct
    group values. Results are sorted by group value.
    """
    rounded = np.round(density_map.grid.data.reshape(-1), GROUP_DECIMALS)
    groups = np.unique(rounded)
    if groups.size == 0:
        return []
    centre = groups.mean()
    return [GroupDistance(group_value=float(g), distance=float(abs(g - centre))) for g in groups]


def imbalance_statistics(density_map: DensityMap, threshold: float = 1e-3) -> dict:
    """
    Summary of pixel-value imbalance

    Returns the fraction of pixels below ``threshold``, the fraction above half
    the peak, and the peak value itself.
    """
    values = density_map.grid.data.reshape(-1)
    peak = float(values.max()) if values.size else 0.0
    return {
        "pixels": int(values.size),
        "peak": peak,
        "fraction_below_threshold": float(np.mean(values < threshold)) if values.size else 0.0,
        "fraction_above_half_peak": float(np.mean(values > peak / 2.0)) if peak > 0 else 0.0,
    }


def count_from_grid(grid: Sequence[float], scale_factor: float) -> float:
    """Object count of a (predicted or ground-truth) map: integral divided by the scale factor"""
    return float(np.sum(grid)) / scale_factor
