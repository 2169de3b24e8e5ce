"""
Unit tests for the autodiff tensor
"""

import numpy as np
import pytest

from tutor_curriculum.core.tensor import Tensor, is_grad_enabled, no_grad, stable_sigmoid
from tutor_curriculum.exceptions import ShapeMismatchError


@pytest.mark.unit
class TestTensorBasics:
    """Storage, copies and detachment"""

    def test_values_are_float64_copies(self):
        source = np.array([1, 2, 3])
        t = Tensor(source)
        source[0] = 99
        assert t.data.dtype == np.float64
        assert t.data[0] == 1.0

    def test_data_is_read_only(self):
        t = Tensor([1.0, 2.0])
        with pytest.raises(ValueError):
            t.data[0] = 5.0

    def test_numpy_returns_writable_copy(self):
        t = Tensor([1.0, 2.0])
        copy = t.numpy()
        copy[0] = 5.0
        assert t.data[0] == 1.0

    def test_item_requires_single_element(self):
        assert Tensor(3.5).item() == 3.5
        with pytest.raises(ValueError, match="single-element"):
            Tensor([1.0, 2.0]).item()

    def test_detach_cuts_gradient_flow(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = (x * 3.0).detach()
        assert not y.requires_grad
        assert y.is_leaf
        np.testing.assert_array_equal(y.data, [3.0, 6.0])


@pytest.mark.unit
class TestBackward:
    """Reverse-mode gradients"""

    def test_elementwise_chain(self):
        # Arrange
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        y = Tensor([0.5, 0.5, 2.0], requires_grad=True)

        # Act
        loss = ((x * y) + x.square() - y).sum()
        loss.backward()

        # Assert: d/dx = y + 2x, d/dy = x - 1
        np.testing.assert_allclose(x.grad, [0.5 + 2.0, 0.5 - 4.0, 2.0 + 6.0])
        np.testing.assert_allclose(y.grad, [0.0, -3.0, 2.0])

    def test_reused_input_accumulates(self):
        x = Tensor([2.0, 3.0], requires_grad=True)
        (x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [5.0, 7.0])

    def test_only_leaves_keep_gradients(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        hidden = x * 2.0
        hidden.sum().backward()
        assert hidden.grad is None
        np.testing.assert_allclose(x.grad, [2.0, 2.0])

    def test_mean_and_scalar_operators(self):
        x = Tensor([1.0, 2.0, 3.0, 4.0], requires_grad=True)
        (1.0 - x.scale(2.0)).mean().backward()
        np.testing.assert_allclose(x.grad, np.full(4, -0.5))

    def test_relu_and_maximum_gradients(self):
        x = Tensor([-1.0, 0.5, 2.0], requires_grad=True)
        (x.relu() + x.maximum(1.0)).sum().backward()
        np.testing.assert_allclose(x.grad, [0.0, 1.0, 2.0])

    def test_sigmoid_gradient(self):
        x = Tensor([0.0], requires_grad=True)
        x.sigmoid().sum().backward()
        np.testing.assert_allclose(x.grad, [0.25])

    def test_backward_without_grad_raises(self):
        with pytest.raises(RuntimeError, match="does not require grad"):
            Tensor([1.0]).sum().backward()

    def test_deep_graph_does_not_recurse(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y + 1.0
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [1.0])

    def test_numpy_scalar_on_the_left(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = np.float64(3.0) * x
        assert isinstance(y, Tensor)
        y.sum().backward()
        np.testing.assert_allclose(x.grad, [3.0, 3.0])


@pytest.mark.unit
class TestGradMode:
    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            assert not is_grad_enabled()
            y = x * 2.0
        assert is_grad_enabled()
        assert not y.requires_grad
        assert y.node is None

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])


@pytest.mark.unit
def test_stable_sigmoid_extremes():
    values = stable_sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert np.all(np.isfinite(values))
    np.testing.assert_allclose(values, [0.0, 0.5, 1.0])
