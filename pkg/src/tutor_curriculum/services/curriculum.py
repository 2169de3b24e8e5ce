"""
Curriculum math

The weight activation turns TutorNet's pre-activation into per-pixel weights,
the tutor loss (with its closed-form gradient) trains TutorNet from the
detached error map, and the weighted main loss trains the main network with
the detached weight map.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tutor_curriculum.core.tensor import DTYPE, Function, Tensor, stable_sigmoid
from tutor_curriculum.exceptions import ShapeMismatchError
from tutor_curriculum.models.curriculum_models import ErrorMap, WeightMap
from tutor_curriculum.models.scene_models import DensityMap, HistogramBin
from tutor_curriculum.services.density_maps import equal_width_histogram


logger = logging.getLogger(__name__)

# Largest float below 1; weights never reach 1
BELOW_ONE = float(np.nextafter(1.0, 0.0))


class WeightActivation(Function):
    """sigmoid(x) for x > 0, the floor T otherwise"""
    name = "weight_activation"

    def forward(self, x, floor: float):
        positive = x > 0
        logistic = stable_sigmoid(x)
        clipped = logistic >= BELOW_ONE
        self.slope = np.where(positive & ~clipped, logistic * (1.0 - logistic), 0.0)
        return np.where(positive, np.minimum(logistic, BELOW_ONE), floor)

    def backward(self, grad):
        return (grad * self.slope,)


def weight_activation(x: Tensor, T: float = 0.5) -> WeightMap:
    """
    Map pre-activations to curriculum weights

    Values land in {T} ∪ (0.5, 1). The gradient is the logistic derivative on
    the positive branch and zero elsewhere.
    """
    if not 0.0 < T < 1.0:
        raise ValueError(f"T must lie in (0, 1), got {T}")
    return WeightMap(grid=WeightActivation.apply(x, floor=float(T)))


def unit_weight_map(shape: Tuple[int, ...]) -> WeightMap:
    """All-ones weights: the main loss reduces to plain MSE"""
    return WeightMap(grid=Tensor(np.ones(shape, dtype=DTYPE)))


def _require_same_shape(operation: str, left: Tuple[int, ...], right: Tuple[int, ...]) -> None:
    if tuple(left) != tuple(right):
        raise ShapeMismatchError(operation, tuple(left), tuple(right))


def error_map(pred: Tensor, gt: DensityMap) -> ErrorMap:
    """Detached per-pixel squared error (pred - gt)²"""
    _require_same_shape("error_map", pred.shape, gt.grid.shape)
    return ErrorMap(grid=Tensor((pred.data - gt.grid.data) ** 2))


def tutor_loss(w: WeightMap, e: ErrorMap, M: float = 0.8) -> Tensor:
    """
    Sum over pixels of (1 - w)·e + w·max(M - e, 0)

    Only ``w`` carries gradient; ``e`` is treated as a constant.
    """
    _require_same_shape("tutor_loss", w.shape, e.shape)
    errors = e.grid.detach()
    hinge = Tensor(np.maximum(M - errors.data, 0.0))
    return ((1.0 - w.grid) * errors + w.grid * hinge).sum()


def tutor_loss_grad(w: WeightMap, e: ErrorMap, M: float = 0.8) -> Tensor:
    """
    Closed-form ∂L_Tutor/∂w: M - 2e where e < M, -e where e >= M

    At the kink e = M the -e branch is used.
    """
    _require_same_shape("tutor_loss_grad", w.shape, e.shape)
    errors = e.grid.data
    return Tensor(np.where(errors < M, M - 2.0 * errors, -errors))


def main_loss(pred: Tensor, gt: DensityMap, w: WeightMap) -> Tensor:
    """Mean over pixels of (pred - gt)² · w with w and gt held constant"""
    _require_same_shape("main_loss", pred.shape, gt.grid.shape)
    _require_same_shape("main_loss", pred.shape, w.shape)
    residual = pred - gt.grid.detach()
    return (residual.square() * w.grid.detach()).mean()


def descent_step_w(w: float, e: float, M: float = 0.8, alpha: float = 0.1, T: float = 0.5) -> float:
    """
    One scalar gradient-descent step on a single weight

    The result is clamped to [T, 1), the range the weight activation can emit.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    gradient = M - 2.0 * e if e < M else -e
    updated = w - alpha * gradient
    return float(min(max(updated, T), BELOW_ONE))


def weight_statistics(w: WeightMap) -> Tuple[float, float, float]:
    """(mean, min, max) of a weight map"""
    data = w.grid.data
    return float(data.mean()), float(data.min()), float(data.max())


def error_histogram(e: ErrorMap, bins: int = 20) -> List[HistogramBin]:
    """Equal-width histogram of squared errors over [0, max e]"""
    return equal_width_histogram(e.grid.data, bins)


def pooled_error_histogram(errors: Sequence[ErrorMap], bins: int = 20) -> List[HistogramBin]:
    """Histogram over the concatenated pixels of several error maps"""
    if not errors:
        raise ValueError("errors cannot be empty")
    values = np.concatenate([e.grid.data.reshape(-1) for e in errors])
    return equal_width_histogram(values, bins)


def tutor_loss_surface(
    M: float = 1.0,
    w_values: Optional[Sequence[float]] = None,
    e_values: Optional[Sequence[float]] = None,
) -> pd.DataFrame:
    """
    Per-pixel tutor loss (1 - w)·e + w·max(M - e, 0) over a (w, e) grid

    Returns a long-format frame with columns w, e, loss ordered by w then e.
    """
    if M <= 0:
        raise ValueError(f"M must be positive, got {M}")
    w_axis = np.linspace(0.0, 1.0, 11) if w_values is None else np.asarray(w_values, dtype=DTYPE)
    e_axis = np.linspace(0.0, 2.0 * M, 21) if e_values is None else np.asarray(e_values, dtype=DTYPE)
    ww, ee = np.meshgrid(w_axis, e_axis, indexing="ij")
    loss = (1.0 - ww) * ee + ww * np.maximum(M - ee, 0.0)
    return pd.DataFrame({"w": ww.reshape(-1), "e": ee.reshape(-1), "loss": loss.reshape(-1)})
