"""
Network construction, initialization and forward passes

TutorNet follows a four-depth residual family: a 7×7 stride-2 stem, an
unpadded 3×3 stride-2 max pool, three residual stages (the second one
downsamples in its first convolution) and a 1×1 head ending in the weight
activation. The main networks are small stand-ins for four density-regression
families (multi-column, deep single column, U-shaped skips, dense
concatenation); all of them output at 1/8 input resolution.
"""

import logging
import math
from fractions import Fraction
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from tutor_curriculum.core.functional import concat, conv2d, maxpool2d, upsample_nearest
from tutor_curriculum.core.tensor import DTYPE, Tensor
from tutor_curriculum.models.network_models import (
    ColumnsLayer,
    ConvLayer,
    DenseBlockLayer,
    FinalActivation,
    MaxPoolLayer,
    NetworkParams,
    NetworkSpec,
    ReluLayer,
    ResidualStage,
    SkipConcatLayer,
)
from tutor_curriculum.services.curriculum import weight_activation


logger = logging.getLogger(__name__)

TUTOR_DEPTHS = (15, 29, 43, 94)
MAIN_NET_KINDS = ("mcnn-tiny", "vggish-tiny", "unet-tiny", "dense-tiny")
DEFAULT_WIDTH = Fraction(1, 8)
FINAL_BIAS = 1.0

Multiplier = Union[Fraction, int, str]

# depth -> (block kind, repeats per stage, block(2) middle width at full scale)
_TUTOR_FAMILY: Dict[int, Tuple[str, Tuple[int, int, int], Optional[int]]] = {
    15: ("residual-basic", (2, 2, 2), None),
    29: ("residual-basic", (3, 4, 6), None),
    43: ("residual-bottleneck", (3, 4, 6), None),
    94: ("residual-bottleneck", (3, 4, 23), 64),
}


def _scaled(channels: int, multiplier: Fraction) -> int:
    value = channels * multiplier
    if value.denominator != 1 or value < 1:
        raise ValueError(
            f"width_multiplier {multiplier} turns {channels} channels into {value}; "
            f"every channel count must be a positive integer"
        )
    return int(value)


def _conv(out_channels: int, kernel: int, stride: int = 1, relu: bool = True) -> List:
    layers = [ConvLayer(out_channels=out_channels, kernel=kernel, stride=stride, padding=kernel // 2, relu_gain=relu)]
    if relu:
        layers.append(ReluLayer())
    return layers


def tutornet_spec(depth: int, width_multiplier: Multiplier = DEFAULT_WIDTH, T: float = 0.5) -> NetworkSpec:
    """
    TutorNet of the given depth

    Args:
        depth: one of 15, 29, 43, 94
        width_multiplier: channel shrink applied to every hidden width
        T: floor weight of the final weight activation

    Raises:
        ValueError: unknown depth or a multiplier producing fractional channels
    """
    if depth not in _TUTOR_FAMILY:
        raise ValueError(f"Invalid TutorNet depth {depth}; expected one of {TUTOR_DEPTHS}")
    multiplier = Fraction(width_multiplier)
    kind, repeats, block2_mid = _TUTOR_FAMILY[depth]

    layers: List = [
        ConvLayer(out_channels=_scaled(64, multiplier), kernel=7, stride=2, padding=3),
        ReluLayer(),
        MaxPoolLayer(k=3, stride=2),
    ]
    for stage, (channels, stride) in enumerate(((64, 1), (128, 2), (256, 1))):
        mid = block2_mid if stage == 1 else None
        layers.append(
            ResidualStage(
                kind=kind,
                channels=_scaled(channels, multiplier),
                repeats=repeats[stage],
                stride=stride,
                mid_channels=_scaled(mid, multiplier) if mid else None,
            )
        )
    if kind == "residual-bottleneck":
        layers.extend(_conv(_scaled(128, multiplier), kernel=1))
    layers.append(ConvLayer(out_channels=1, kernel=1, relu_gain=False))
    layers.append(FinalActivation(activation="weight_activation", floor_weight=T))
    return NetworkSpec(name=f"tutornet-{depth}", layers=layers, width_multiplier=multiplier)


def _mcnn_tiny(m: Fraction) -> List:
    branches = []
    for kernel, widths in ((9, (64, 128, 64)), (7, (96, 192, 96)), (5, (128, 256, 128))):
        branch: List = []
        for width in widths:
            branch.extend(_conv(_scaled(width, m), kernel=kernel, stride=2))
        branches.append(branch)
    return [ColumnsLayer(branches=branches), ConvLayer(out_channels=1, kernel=1, relu_gain=False)]


def _vggish_tiny(m: Fraction) -> List:
    layers: List = []
    for width in (64, 128, 256):
        layers.extend(_conv(_scaled(width, m), kernel=3))
        layers.extend(_conv(_scaled(width, m), kernel=3))
        layers.append(MaxPoolLayer(k=2, stride=2))
    layers.extend(_conv(_scaled(128, m), kernel=3))
    layers.append(ConvLayer(out_channels=1, kernel=1, relu_gain=False))
    return layers


def _unet_tiny(m: Fraction) -> List:
    inner = _conv(_scaled(256, m), kernel=3, stride=2) + _conv(_scaled(256, m), kernel=3)
    return (
        _conv(_scaled(64, m), kernel=3, stride=2)
        + _conv(_scaled(128, m), kernel=3, stride=2)
        + [SkipConcatLayer(inner=inner, upsample=2)]
        + _conv(_scaled(128, m), kernel=3, stride=2)
        + [ConvLayer(out_channels=1, kernel=1, relu_gain=False)]
    )


def _dense_tiny(m: Fraction) -> List:
    layers: List = _conv(_scaled(64, m), kernel=3, stride=2)
    for _ in range(2):
        layers.append(DenseBlockLayer(growth=_scaled(32, m), layers=3))
        layers.extend(_conv(_scaled(128, m), kernel=1))
        layers.append(MaxPoolLayer(k=2, stride=2))
    layers.append(ConvLayer(out_channels=1, kernel=1, relu_gain=False))
    return layers


_MAIN_BUILDERS: Dict[str, Callable[[Fraction], List]] = {
    "mcnn-tiny": _mcnn_tiny,
    "vggish-tiny": _vggish_tiny,
    "unet-tiny": _unet_tiny,
    "dense-tiny": _dense_tiny,
}


def main_net_spec(kind: str, width_multiplier: Multiplier = DEFAULT_WIDTH) -> NetworkSpec:
    """
    Desk-scale main network emitting a non-negative 1/8-resolution density map

    Raises:
        ValueError: unknown kind or a multiplier producing fractional channels
    """
    if kind not in _MAIN_BUILDERS:
        raise ValueError(f"Invalid main network kind '{kind}'; expected one of {MAIN_NET_KINDS}")
    multiplier = Fraction(width_multiplier)
    layers = _MAIN_BUILDERS[kind](multiplier) + [FinalActivation(activation="relu")]
    return NetworkSpec(name=kind, layers=layers, width_multiplier=multiplier)


def spec_from_name(name: str, width_multiplier: Multiplier = DEFAULT_WIDTH, T: float = 0.5) -> NetworkSpec:
    """Resolve ``tutornet-<depth>`` or a main network kind"""
    if name.startswith("tutornet-"):
        suffix = name.split("-", 1)[1]
        if not suffix.isdigit():
            raise ValueError(f"Invalid TutorNet name '{name}'")
        return tutornet_spec(int(suffix), width_multiplier, T)
    return main_net_spec(name, width_multiplier)


# ----------------------------------------------------------------------
# Parameter planning

class _ParameterPlanner:
    """Walks a spec and records (key, shape, gain) for every parameter"""

    def __init__(self):
        self.slots: List[Tuple[str, Tuple[int, ...], float]] = []

    def conv(self, key: str, in_channels: int, out_channels: int, kernel: int, relu_gain: bool) -> int:
        self.slots.append((f"{key}.kernel", (out_channels, in_channels, kernel, kernel), 2.0 if relu_gain else 1.0))
        self.slots.append((f"{key}.bias", (out_channels,), 0.0))
        return out_channels

    def walk(self, layers: Sequence, in_channels: int, prefix: str = "") -> int:
        channels = in_channels
        for index, layer in enumerate(layers):
            key = f"{prefix}{index}"
            if isinstance(layer, ConvLayer):
                channels = self.conv(key, channels, layer.out_channels, layer.kernel, layer.relu_gain)
            elif isinstance(layer, ResidualStage):
                channels = self.residual(key, channels, layer)
            elif isinstance(layer, ColumnsLayer):
                channels = sum(
                    self.walk(branch, channels, f"{key}.branch{b}.") for b, branch in enumerate(layer.branches)
                )
            elif isinstance(layer, DenseBlockLayer):
                for j in range(layer.layers):
                    self.conv(f"{key}.layer{j}", channels, layer.growth, layer.kernel, True)
                    channels += layer.growth
            elif isinstance(layer, SkipConcatLayer):
                channels += self.walk(layer.inner, channels, f"{key}.inner.")
        return channels

    def residual(self, key: str, in_channels: int, stage: ResidualStage) -> int:
        channels = in_channels
        for block in range(stage.repeats):
            stride = stage.stride if block == 0 else 1
            base = f"{key}.block{block}"
            if stage.kind == "residual-basic":
                self.conv(f"{base}.conv1", channels, stage.channels, 3, True)
                self.conv(f"{base}.conv2", stage.channels, stage.channels, 3, True)
            else:
                self.conv(f"{base}.conv1", channels, stage.channels, 1, True)
                self.conv(f"{base}.conv2", stage.channels, stage.inner_channels, 3, True)
                self.conv(f"{base}.conv3", stage.inner_channels, stage.out_channels, 1, True)
            if stride != 1 or channels != stage.out_channels:
                self.conv(f"{base}.shortcut", channels, stage.out_channels, 1, False)
            channels = stage.out_channels
        return channels


def parameter_shapes(spec: NetworkSpec) -> Dict[str, Tuple[int, ...]]:
    planner = _ParameterPlanner()
    planner.walk(spec.layers, spec.in_channels)
    return {key: shape for key, shape, _ in planner.slots}


def _final_conv_key(spec: NetworkSpec) -> Optional[str]:
    for index in range(len(spec.layers) - 1, -1, -1):
        if isinstance(spec.layers[index], ConvLayer):
            return f"{index}"
    return None


def init_params(spec: NetworkSpec, seed: int = 0) -> NetworkParams:
    """
    He-normal kernels, zero biases

    Kernels are N(0, gain / fan_in) with gain 2 ahead of a relu and 1
    otherwise. When the network ends in the weight activation, the final
    convolution's bias is +1 so initial weights start near sigmoid(1).
    """
    planner = _ParameterPlanner()
    planner.walk(spec.layers, spec.in_channels)
    rng = np.random.default_rng(seed)

    final = spec.final_activation
    permissive_key = None
    if final is not None and final.activation == "weight_activation":
        permissive_key = f"{_final_conv_key(spec)}.bias"

    tensors: Dict[str, Tensor] = {}
    for key, shape, gain in planner.slots:
        if key.endswith(".kernel"):
            fan_in = shape[1] * shape[2] * shape[3]
            values = rng.standard_normal(shape) * math.sqrt(gain / fan_in)
        elif key == permissive_key:
            values = np.full(shape, FINAL_BIAS, dtype=DTYPE)
        else:
            values = np.zeros(shape, dtype=DTYPE)
        tensors[key] = Tensor(values, requires_grad=True)

    params = NetworkParams(tensors)
    logger.debug(f"Initialized {spec.name} with {len(params)} tensors, {params.parameter_count} values (seed {seed})")
    return params


# ----------------------------------------------------------------------
# Forward pass

def _run(layers: Sequence, params: NetworkParams, x: Tensor, prefix: str = "") -> Tensor:
    for index, layer in enumerate(layers):
        key = f"{prefix}{index}"
        if isinstance(layer, ConvLayer):
            x = conv2d(x, params[f"{key}.kernel"], params[f"{key}.bias"], layer.stride, layer.padding)
        elif isinstance(layer, ReluLayer):
            x = x.relu()
        elif isinstance(layer, MaxPoolLayer):
            x = maxpool2d(x, layer.k, layer.stride)
        elif isinstance(layer, ResidualStage):
            x = _run_residual(key, layer, params, x)
        elif isinstance(layer, ColumnsLayer):
            x = concat([_run(branch, params, x, f"{key}.branch{b}.") for b, branch in enumerate(layer.branches)])
        elif isinstance(layer, DenseBlockLayer):
            for j in range(layer.layers):
                grown = conv2d(
                    x, params[f"{key}.layer{j}.kernel"], params[f"{key}.layer{j}.bias"], 1, layer.kernel // 2
                ).relu()
                x = concat([x, grown])
        elif isinstance(layer, SkipConcatLayer):
            inner = _run(layer.inner, params, x, f"{key}.inner.")
            x = concat([x, upsample_nearest(inner, layer.upsample)])
        elif isinstance(layer, FinalActivation):
            if layer.activation == "weight_activation":
                x = weight_activation(x, layer.floor_weight).grid
            elif layer.activation == "relu":
                x = x.relu()
    return x


def _conv_key(params: NetworkParams, key: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return conv2d(x, params[f"{key}.kernel"], params[f"{key}.bias"], stride, padding)


def _run_residual(key: str, stage: ResidualStage, params: NetworkParams, x: Tensor) -> Tensor:
    for block in range(stage.repeats):
        stride = stage.stride if block == 0 else 1
        base = f"{key}.block{block}"
        if stage.kind == "residual-basic":
            out = _conv_key(params, f"{base}.conv1", x, stride, 1).relu()
            out = _conv_key(params, f"{base}.conv2", out, 1, 1)
        else:
            out = _conv_key(params, f"{base}.conv1", x, stride, 0).relu()
            out = _conv_key(params, f"{base}.conv2", out, 1, 1).relu()
            out = _conv_key(params, f"{base}.conv3", out, 1, 0)
        shortcut_key = f"{base}.shortcut"
        shortcut = _conv_key(params, shortcut_key, x, stride, 0) if f"{shortcut_key}.kernel" in params else x
        x = (out + shortcut).relu()
    return x


def forward(spec: NetworkSpec, params: NetworkParams, x: Tensor) -> Tensor:
    """
    Run a network on a 1×C×H×W input

    Raises:
        ValueError: wrong rank or channel count, or H/W not divisible by the
            spec's downsampling rate
    """
    if x.ndim != 4:
        raise ValueError(f"{spec.name} expects an NCHW input, got shape {x.shape}")
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"{spec.name} expects {spec.in_channels} input channels, got {x.shape[1]}")
    height, width = x.shape[2], x.shape[3]
    if height % spec.downsampling or width % spec.downsampling:
        raise ValueError(
            f"{spec.name} input dims {height}x{width} must be divisible by {spec.downsampling}"
        )
    return _run(spec.layers, params, x)
