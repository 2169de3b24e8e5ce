"""
Unit tests for finite-difference gradient checking and the check suite
"""

import math

import numpy as np
import pytest

from tutor_curriculum.core.gradcheck import GradCheckResult, check_named, finite_difference_check
from tutor_curriculum.core.tensor import Function, Tensor
from tutor_curriculum.services.experiments import run_gradient_checks


class WrongSquare(Function):
    """Square with a deliberately wrong derivative"""

    def forward(self, a):
        self.a = a
        return a * a

    def backward(self, grad):
        return (3.0 * self.a * grad,)


@pytest.mark.unit
class TestFiniteDifferenceCheck:
    def test_correct_gradient_passes(self, rng):
        error = finite_difference_check(lambda x: x.square().sum(), Tensor(rng.normal(size=6)))
        assert error < 1e-8

    def test_wrong_gradient_is_detected(self, rng):
        error = finite_difference_check(lambda x: WrongSquare.apply(x).sum(), Tensor(rng.uniform(1, 2, size=4)))
        assert error > 0.1

    def test_non_scalar_function_rejected(self):
        with pytest.raises(ValueError, match="scalar function"):
            finite_difference_check(lambda x: x * 2.0, Tensor([1.0, 2.0]))

    def test_non_finite_output_reports_inf(self):
        assert finite_difference_check(lambda x: (x * math.inf).sum(), Tensor([1.0])) == math.inf

    def test_coordinate_subset(self, rng):
        result = check_named("square", lambda x: x.square().sum(), Tensor(rng.normal(size=10)), 1e-6,
                             coordinates=[0, 3])
        assert result.coordinates == 2
        assert result.passed

    def test_result_fails_above_tolerance(self):
        assert not GradCheckResult("x", 1e-3, 1e-6, 1).passed
        assert not GradCheckResult("x", math.nan, 1e-6, 1).passed


@pytest.mark.unit
class TestGradientCheckSuite:
    """The suite behind ``tutornet check-grad``"""

    def test_every_check_passes(self):
        results = run_gradient_checks(seed=0)
        failures = [(r.name, r.max_error) for r in results if not r.passed]
        assert failures == []

    def test_suite_covers_every_operation(self):
        names = {r.name for r in run_gradient_checks(seed=1)}
        for expected in ("add", "mul", "relu", "sigmoid", "conv2d.kernel", "conv2d.stride2_pad1",
                         "maxpool2d", "concat", "upsample_nearest", "weight_activation",
                         "tutor_loss.w", "tutor_loss_grad.closed_form", "main_loss.pred"):
            assert expected in names
        assert any(name.startswith("forward.tutornet-15") for name in names)

    def test_elementwise_errors_are_tiny(self):
        results = {r.name: r for r in run_gradient_checks(seed=2)}
        assert max(results[name].max_error for name in ("add", "sub", "mul", "square", "sum", "mean")) < 1e-5
