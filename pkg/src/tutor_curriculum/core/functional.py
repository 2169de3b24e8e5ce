"""
Functional operations on NCHW tensors

Convolution and max pooling are built on strided window views of the input
(``numpy.lib.stride_tricks.sliding_window_view``) contracted with
``numpy.tensordot``; their backward passes scatter window gradients back onto
the (padded) input.
"""

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from tutor_curriculum.core.tensor import DTYPE, Function, Tensor
from tutor_curriculum.exceptions import ShapeMismatchError


ELEMENTWISE_OPS = (
    "add", "sub", "mul", "square", "relu", "sigmoid", "scale-by-constant", "max-with-constant",
)
REDUCE_OPS = ("sum", "mean")


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _require_nchw(operation: str, x: np.ndarray) -> None:
    if x.ndim != 4:
        raise ValueError(f"{operation} expects an NCHW input, got shape {x.shape}")


class Conv2d(Function):
    name = "conv2d"

    def forward(self, x, kernel, bias=None, stride: int = 1, padding: int = 0):
        _require_nchw(self.name, x)
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if padding < 0:
            raise ValueError(f"padding must be >= 0, got {padding}")
        if kernel.ndim != 4:
            raise ValueError(f"conv2d kernel must be OIHW, got shape {kernel.shape}")
        if x.shape[1] != kernel.shape[1]:
            raise ShapeMismatchError("conv2d channels", (x.shape[1],), (kernel.shape[1],))
        if bias is not None and bias.shape != (kernel.shape[0],):
            raise ShapeMismatchError("conv2d bias", bias.shape, (kernel.shape[0],))

        _, _, height, width = x.shape
        kh, kw = kernel.shape[2], kernel.shape[3]
        if kh > height + 2 * padding or kw > width + 2 * padding:
            raise ValueError(
                f"Kernel {kh}x{kw} is larger than padded input "
                f"{height + 2 * padding}x{width + 2 * padding}"
            )

        padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]

        self.stride = stride
        self.padding = padding
        self.input_shape = x.shape
        self.padded_shape = padded.shape
        self.kernel = kernel
        self.windows = windows
        self.has_bias = bias is not None

        # (N, Ho, Wo, O) -> (N, O, Ho, Wo)
        out = np.tensordot(windows, kernel, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if bias is not None:
            out = out + bias[None, :, None, None]
        return np.ascontiguousarray(out)

    def backward(self, grad):
        kh, kw = self.kernel.shape[2], self.kernel.shape[3]
        out_h, out_w = grad.shape[2], grad.shape[3]
        s = self.stride

        grad_kernel = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        grad_bias = grad.sum(axis=(0, 2, 3)) if self.has_bias else None

        # (N, Ho, Wo, C, kh, kw)
        columns = np.tensordot(grad, self.kernel, axes=([1], [0]))
        grad_padded = np.zeros(self.padded_shape, dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                grad_padded[
                    :, :, i: i + s * (out_h - 1) + 1: s, j: j + s * (out_w - 1) + 1: s
                ] += columns[:, :, :, :, i, j].transpose(0, 3, 1, 2)

        p = self.padding
        height, width = self.input_shape[2], self.input_shape[3]
        grad_input = grad_padded[:, :, p: p + height, p: p + width]

        if self.has_bias:
            return grad_input, grad_kernel, grad_bias
        return grad_input, grad_kernel


class MaxPool2d(Function):
    name = "maxpool2d"

    def forward(self, x, k: int, stride: int):
        _require_nchw(self.name, x)
        if k < 1 or stride < 1:
            raise ValueError(f"maxpool2d needs k >= 1 and stride >= 1, got k={k}, stride={stride}")
        n, c, height, width = x.shape
        if k > height or k > width:
            raise ValueError(f"Pooling window {k}x{k} exceeds input {height}x{width}")

        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out_h, out_w = windows.shape[2], windows.shape[3]
        flat = windows.reshape(n, c, out_h, out_w, k * k)
        # argmax returns the first maximum in row-major window order
        winner = np.argmax(flat, axis=-1)

        self.input_shape = x.shape
        self.rows = np.arange(out_h)[None, None, :, None] * stride + winner // k
        self.cols = np.arange(out_w)[None, None, None, :] * stride + winner % k
        return np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c = self.input_shape[0], self.input_shape[1]
        grad_input = np.zeros(self.input_shape, dtype=DTYPE)
        batch = np.arange(n)[:, None, None, None]
        channel = np.arange(c)[None, :, None, None]
        np.add.at(grad_input, (batch, channel, self.rows, self.cols), grad)
        return (grad_input,)


class Concat(Function):
    """Channel-axis concatenation"""

    name = "concat"

    def forward(self, *arrays):
        for array in arrays:
            _require_nchw(self.name, array)
            if array.shape[0] != arrays[0].shape[0] or array.shape[2:] != arrays[0].shape[2:]:
                raise ShapeMismatchError(self.name, arrays[0].shape, array.shape)
        self.splits = np.cumsum([a.shape[1] for a in arrays])[:-1]
        return np.concatenate(arrays, axis=1)

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=1))


class UpsampleNearest(Function):
    name = "upsample-nearest"

    def forward(self, x, factor: int):
        _require_nchw(self.name, x)
        self.factor = factor
        return x.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad):
        n, c, height, width = grad.shape
        f = self.factor
        return (grad.reshape(n, c, height // f, f, width // f, f).sum(axis=(3, 5)),)


def conv2d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation; output size floor((in + 2p - k) / stride) + 1"""
    if bias is None:
        return Conv2d.apply(x, kernel, stride=stride, padding=padding)
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Max pooling without padding; ties route the gradient to the first element"""
    return MaxPool2d.apply(x, k=k, stride=stride)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    return Concat.apply(*tensors)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    return UpsampleNearest.apply(x, factor=factor)


def elementwise(op: str, a: Tensor, b: Optional[Tensor] = None, constant: Optional[float] = None) -> Tensor:
    """Dispatch one of ELEMENTWISE_OPS by name"""
    if op in ("add", "sub", "mul"):
        if b is None:
            raise ValueError(f"{op} needs a second tensor operand")
        return _binary(op, a, b)
    if op == "square":
        return a.square()
    if op == "relu":
        return a.relu()
    if op == "sigmoid":
        return a.sigmoid()
    if op in ("scale-by-constant", "max-with-constant"):
        if constant is None:
            raise ValueError(f"{op} needs a constant")
        return a.scale(constant) if op == "scale-by-constant" else a.maximum(constant)
    raise ValueError(f"Unsupported elementwise op '{op}'; expected one of {ELEMENTWISE_OPS}")


def _binary(op: str, a: Tensor, b: Tensor) -> Tensor:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    return a * b


def reduce(op: str, a: Tensor) -> Tensor:
    """Dispatch one of REDUCE_OPS by name; the result is a scalar tensor"""
    if op == "sum":
        return a.sum()
    if op == "mean":
        return a.mean()
    raise ValueError(f"Unsupported reduce op '{op}'; expected one of {REDUCE_OPS}")
