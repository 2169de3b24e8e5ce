"""
Network specification models

A NetworkSpec is an ordered list of layer descriptors. Descriptors are
pydantic models discriminated by ``kind`` so specs can be validated,
compared and stored in checkpoint metadata as JSON. Channel counts held in a
spec are already scaled by the width multiplier.
"""

from collections import OrderedDict
from fractions import Fraction
from typing import Annotated, Dict, Iterator, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator

from tutor_curriculum.core.tensor import Tensor


class ConvLayer(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["conv"] = "conv"
    out_channels: int = Field(gt=0)
    kernel: int = Field(gt=0)
    stride: int = Field(default=1, ge=1)
    padding: int = Field(default=0, ge=0)
    # He gain sqrt(2) when a relu follows, 1 otherwise
    relu_gain: bool = True


class MaxPoolLayer(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["maxpool"] = "maxpool"
    k: int = Field(gt=0)
    stride: int = Field(ge=1)


class ReluLayer(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["relu"] = "relu"


class ResidualStage(BaseModel):
    """
    A stack of residual blocks

    Basic blocks are two 3×3 convolutions with ``channels`` outputs.
    Bottleneck blocks are 1×1 ``channels``, 3×3 ``mid_channels`` (defaults to
    ``channels``) and 1×1 ``expansion * channels``. Only the first block of a
    stage carries ``stride``, in its first convolution.
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["residual-basic", "residual-bottleneck"]
    channels: int = Field(gt=0)
    repeats: int = Field(gt=0)
    stride: int = Field(default=1, ge=1)
    mid_channels: Optional[int] = Field(default=None, gt=0)
    expansion: int = Field(default=4, gt=0)

    @property
    def out_channels(self) -> int:
        return self.channels if self.kind == "residual-basic" else self.channels * self.expansion

    @property
    def inner_channels(self) -> int:
        return self.mid_channels or self.channels


class FinalActivation(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["final-activation"] = "final-activation"
    activation: Literal["weight_activation", "relu", "none"]
    floor_weight: float = Field(default=0.5, gt=0.0, lt=1.0)


class ColumnsLayer(BaseModel):
    """Parallel branches over the same input, concatenated on the channel axis"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["columns"] = "columns"
    branches: List[List["Layer"]]

    @field_validator("branches")
    @classmethod
    def check_branches(cls, value):
        if len(value) < 2:
            raise ValueError("columns needs at least two branches")
        strides = {cumulative_stride(branch) for branch in value}
        if len(strides) != 1:
            raise ValueError(f"column branches must share one stride, got {sorted(strides)}")
        return value


class DenseBlockLayer(BaseModel):
    """Each inner layer sees the concatenation of the block input and all earlier outputs"""
    model_config = ConfigDict(frozen=True)

    kind: Literal["dense-block"] = "dense-block"
    growth: int = Field(gt=0)
    layers: int = Field(gt=0)
    kernel: int = Field(default=3, gt=0)


class SkipConcatLayer(BaseModel):
    """
    U-shaped skip: ``inner`` runs on the input, its output is upsampled by
    ``upsample`` and concatenated with the input
    """
    model_config = ConfigDict(frozen=True)

    kind: Literal["skip-concat"] = "skip-concat"
    inner: List["Layer"]
    upsample: int = Field(ge=1)

    @model_validator(mode="after")
    def check_alignment(self) -> "SkipConcatLayer":
        if cumulative_stride(self.inner) != self.upsample:
            raise ValueError(
                f"skip-concat inner stride {cumulative_stride(self.inner)} must equal upsample {self.upsample}"
            )
        return self


Layer = Annotated[
    Union[
        ConvLayer, MaxPoolLayer, ReluLayer, ResidualStage, FinalActivation,
        ColumnsLayer, DenseBlockLayer, SkipConcatLayer,
    ],
    Field(discriminator="kind"),
]


def layer_stride(layer) -> int:
    """Spatial reduction factor contributed by one descriptor"""
    if isinstance(layer, (ConvLayer, MaxPoolLayer, ResidualStage)):
        return layer.stride
    if isinstance(layer, ColumnsLayer):
        return cumulative_stride(layer.branches[0])
    # skip-concat returns to its input resolution
    return 1


def cumulative_stride(layers) -> int:
    stride = 1
    for layer in layers:
        stride *= layer_stride(layer)
    return stride


ColumnsLayer.model_rebuild()
SkipConcatLayer.model_rebuild()


class NetworkSpec(BaseModel):
    """Validated description of a network"""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    layers: List[Layer]
    width_multiplier: Fraction = Fraction(1, 8)
    in_channels: int = Field(default=3, gt=0)
    downsampling: int = Field(default=8, ge=1)

    @field_validator("width_multiplier", mode="before")
    @classmethod
    def parse_multiplier(cls, value):
        multiplier = Fraction(value) if not isinstance(value, Fraction) else value
        if multiplier <= 0:
            raise ValueError(f"width_multiplier must be positive, got {value}")
        return multiplier

    @field_serializer("width_multiplier")
    def serialize_multiplier(self, value: Fraction) -> str:
        return str(value)

    @model_validator(mode="after")
    def check_downsampling(self) -> "NetworkSpec":
        stride = cumulative_stride(self.layers)
        if stride != self.downsampling:
            raise ValueError(
                f"Network '{self.name}' cumulative stride {stride} does not match "
                f"declared downsampling {self.downsampling}"
            )
        return self

    @property
    def final_activation(self) -> Optional[FinalActivation]:
        last = self.layers[-1] if self.layers else None
        return last if isinstance(last, FinalActivation) else None


class NetworkParams:
    """
    Ordered parameter tensors keyed ``<layer path>.kernel`` / ``<layer path>.bias``

    Update methods replace tensors rather than mutating arrays in place, so a
    forward graph built before an update keeps the values it was built with.
    """

    def __init__(self, tensors: Optional[Dict[str, Tensor]] = None):
        self._tensors: "OrderedDict[str, Tensor]" = OrderedDict(tensors or {})

    def __getitem__(self, key: str) -> Tensor:
        return self._tensors[key]

    def __setitem__(self, key: str, value: Tensor) -> None:
        self._tensors[key] = value

    def __contains__(self, key: str) -> bool:
        return key in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def keys(self) -> List[str]:
        return list(self._tensors)

    @property
    def parameter_count(self) -> int:
        return sum(tensor.size for tensor in self._tensors.values())

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def gradients(self) -> Dict[str, np.ndarray]:
        """Current gradients; zeros for parameters the last backward did not reach"""
        return {
            key: tensor.grad if tensor.grad is not None else np.zeros(tensor.shape)
            for key, tensor in self._tensors.items()
        }

    def copy(self) -> "NetworkParams":
        return NetworkParams({key: Tensor(tensor.data, requires_grad=True) for key, tensor in self._tensors.items()})

    def equals(self, other: "NetworkParams") -> bool:
        """Bit-level equality of keys, shapes and values"""
        if self.keys() != other.keys():
            return False
        return all(np.array_equal(self[key].data, other[key].data) for key in self._tensors)
