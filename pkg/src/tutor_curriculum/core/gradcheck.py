"""
Finite-difference gradient checking

Compares the reverse-mode gradient of a scalar function with central
differences, coordinate by coordinate.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from tutor_curriculum.core.tensor import Tensor, no_grad


logger = logging.getLogger(__name__)

ScalarFunction = Callable[[Tensor], Tensor]


@dataclass
class GradCheckResult:
    """Outcome of one named gradient check"""
    name: str
    max_error: float
    tolerance: float
    coordinates: int

    @property
    def passed(self) -> bool:
        return math.isfinite(self.max_error) and self.max_error <= self.tolerance


def finite_difference_check(
    f: ScalarFunction,
    x: Tensor,
    eps: float = 1e-5,
    coordinates: Optional[Sequence[int]] = None,
) -> float:
    """
    Max relative error between the analytic and the central-difference gradient

    The error per coordinate is |analytic - numeric| / max(1, |numeric|).

    Args:
        f: scalar-valued function of one tensor
        x: evaluation point
        eps: perturbation size
        coordinates: flat indices to check; all coordinates when omitted

    Returns:
        The maximum error, or ``inf`` when any evaluated value is non-finite.
    """
    base = x.numpy()
    leaf = Tensor(base, requires_grad=True)
    output = f(leaf)
    if output.size != 1:
        raise ValueError(f"finite_difference_check needs a scalar function, got shape {output.shape}")
    if not np.isfinite(output.data).all():
        return math.inf

    if output.requires_grad:
        output.backward()
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    indices = range(flat.size) if coordinates is None else coordinates
    worst = 0.0
    with no_grad():
        for index in indices:
            shifted = flat.copy()
            shifted[index] += eps
            upper = f(Tensor(shifted.reshape(base.shape))).item()
            shifted[index] -= 2.0 * eps
            lower = f(Tensor(shifted.reshape(base.shape))).item()

            numeric = (upper - lower) / (2.0 * eps)
            exact = float(analytic.reshape(-1)[index])
            if not (math.isfinite(numeric) and math.isfinite(exact)):
                return math.inf
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(numeric)))

    logger.debug(f"Gradient check over {len(indices)} coordinates: max error {worst:.3e}")
    return worst


def check_named(
    name: str,
    f: ScalarFunction,
    x: Tensor,
    tolerance: float,
    eps: float = 1e-5,
    coordinates: Optional[Sequence[int]] = None,
) -> GradCheckResult:
    """Run finite_difference_check and package the outcome"""
    error = finite_difference_check(f, x, eps=eps, coordinates=coordinates)
    count = x.size if coordinates is None else len(coordinates)
    return GradCheckResult(name=name, max_error=error, tolerance=tolerance, coordinates=count)
