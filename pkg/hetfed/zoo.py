"""
Model zoo: the five heterogeneous client CNNs, the shared feature extractor,
parameter counting, FLOP estimation, initialization and the parameter wire
format.

Sizes are reported in MiB at 4 bytes per parameter.
"""
import logging
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError, CodecError, DimensionError
from .params import Manifest, ParamEntry, ParamSet, manifest_digest, manifest_size
from .tensor import PaddingMode

logger = logging.getLogger(__name__)

BYTES_PER_PARAM = 4
MIB = 1024 * 1024

# Wire format: magic, version, manifest digest, parameter count, then
# little-endian float32 values.
PAYLOAD_MAGIC = b"HFPS"
PAYLOAD_VERSION = 1
_HEADER = struct.Struct("<4sH32sQ")
HEADER_SIZE = _HEADER.size


@dataclass(frozen=True)
class Conv:
    name: str
    kernel: int
    out_channels: int
    padding: PaddingMode = PaddingMode.VALID


@dataclass(frozen=True)
class MaxPool:
    name: str
    window: int = 2


@dataclass(frozen=True)
class Linear:
    name: str
    out_features: int


@dataclass(frozen=True)
class ReLU:
    name: str


Layer = Union[Conv, MaxPool, Linear, ReLU]
Shape = Tuple[int, ...]


def _next_shape(layer: Layer, shape: Shape) -> Shape:
    if isinstance(layer, Conv):
        if len(shape) != 3:
            raise DimensionError(f"{layer.name}: convolution needs a (C,H,W) input, got {shape}")
        c, h, w = shape
        if layer.padding == PaddingMode.SAME:
            if layer.kernel % 2 == 0:
                raise DimensionError(f"{layer.name}: same padding needs an odd kernel")
            return (layer.out_channels, h, w)
        if layer.kernel > h or layer.kernel > w:
            raise DimensionError(f"{layer.name}: kernel {layer.kernel} larger than input {h}x{w}")
        return (layer.out_channels, h - layer.kernel + 1, w - layer.kernel + 1)
    if isinstance(layer, MaxPool):
        if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
            raise DimensionError(f"{layer.name}: pooling needs even spatial dims, got {shape}")
        return (shape[0], shape[1] // 2, shape[2] // 2)
    if isinstance(layer, Linear):
        return (layer.out_features,)
    return shape


def _layer_params(layer: Layer, shape: Shape) -> List[ParamEntry]:
    if isinstance(layer, Conv):
        return [
            ParamEntry(layer.name, "kernel", (layer.out_channels, shape[0], layer.kernel, layer.kernel)),
            ParamEntry(layer.name, "bias", (layer.out_channels,)),
        ]
    if isinstance(layer, Linear):
        fan_in = int(np.prod(shape))
        return [
            ParamEntry(layer.name, "weight", (layer.out_features, fan_in)),
            ParamEntry(layer.name, "bias", (layer.out_features,)),
        ]
    return []


@dataclass(frozen=True)
class ModelSpec:
    """Declarative layer stack; the shape chain is checked on construction"""

    name: str
    input_shape: Shape
    layers: Tuple[Layer, ...] = ()
    num_classes: Optional[int] = None
    shapes: Tuple[Shape, ...] = field(init=False, repr=False, compare=False)
    manifest: Manifest = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        shapes = [tuple(self.input_shape)]
        entries: List[ParamEntry] = []
        for layer in self.layers:
            entries.extend(_layer_params(layer, shapes[-1]))
            shapes.append(_next_shape(layer, shapes[-1]))
        if self.num_classes is not None and shapes[-1] != (self.num_classes,):
            raise DimensionError(
                f"{self.name}: classifier output {shapes[-1]} does not match {self.num_classes} classes"
            )
        object.__setattr__(self, "shapes", tuple(shapes))
        object.__setattr__(self, "manifest", tuple(entries))

    @property
    def output_shape(self) -> Shape:
        return self.shapes[-1]


@dataclass(frozen=True)
class Model:
    spec: ModelSpec
    params: ParamSet

    def __post_init__(self):
        if self.params.manifest != self.spec.manifest:
            raise DimensionError(f"{self.spec.name}: parameters do not match the model manifest")

    def with_params(self, params: ParamSet) -> "Model":
        return Model(self.spec, params)


# FC1 width and conv2 channels per variant; everything else is shared
_CNN_TABLE = {
    1: (32, 2000, 500),
    2: (16, 2000, 500),
    3: (32, 1000, 500),
    4: (32, 800, 500),
    5: (32, 500, 500),
}
VARIANTS = tuple(sorted(_CNN_TABLE))


def build_cnn(variant: int, num_classes: int = 10, input_shape: Shape = (3, 32, 32)) -> ModelSpec:
    if variant not in _CNN_TABLE:
        raise ArgumentError(f"unknown CNN variant {variant}; expected one of {VARIANTS}")
    conv2_channels, fc1, fc2 = _CNN_TABLE[variant]
    layers = (
        Conv("conv1", 5, 16),
        ReLU("relu1"),
        MaxPool("pool1"),
        Conv("conv2", 5, conv2_channels),
        ReLU("relu2"),
        MaxPool("pool2"),
        Linear("fc1", fc1),
        ReLU("relu3"),
        Linear("fc2", fc2),
        ReLU("relu4"),
        Linear("fc3", num_classes),
    )
    return ModelSpec(f"cnn{variant}", tuple(input_shape), layers, num_classes)


def build_extractor(input_shape: Shape = (3, 32, 32), kernel: int = 3, hidden: int = 16) -> ModelSpec:
    """Two same-padding convolutions C -> hidden -> C; the output keeps the input shape"""
    channels = input_shape[0]
    layers = (
        Conv("conv1", kernel, hidden, PaddingMode.SAME),
        ReLU("relu1"),
        Conv("conv2", kernel, channels, PaddingMode.SAME),
    )
    return ModelSpec("extractor", tuple(input_shape), layers)


def count_params(spec: ModelSpec) -> int:
    return manifest_size(spec.manifest)


def model_size_mib(spec: ModelSpec) -> float:
    return count_params(spec) * BYTES_PER_PARAM / MIB


def estimate_flops(spec: ModelSpec, input_shape: Optional[Shape] = None) -> int:
    """
    Forward FLOPs for one sample.

    conv = 2*K^2*C_in*C_out*H'*W', linear = 2*D_in*D_out, pooling counts its
    input elements and ReLU its elements. Backward is taken as 2x forward by
    the cost ledger.
    """
    if input_shape is not None and tuple(input_shape) != spec.input_shape:
        spec = ModelSpec(spec.name, tuple(input_shape), spec.layers, spec.num_classes)
    total = 0
    for layer, shape_in, shape_out in zip(spec.layers, spec.shapes, spec.shapes[1:]):
        if isinstance(layer, Conv):
            _, h_out, w_out = shape_out
            total += 2 * layer.kernel ** 2 * shape_in[0] * layer.out_channels * h_out * w_out
        elif isinstance(layer, Linear):
            total += 2 * int(np.prod(shape_in)) * layer.out_features
        else:
            total += int(np.prod(shape_in))
    return total


def init_params(spec: ModelSpec, seed: Union[int, np.random.Generator]) -> ParamSet:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero"""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    arrays = {}
    for entry in spec.manifest:
        key = (entry.layer, entry.role)
        if entry.role == "bias":
            arrays[key] = np.zeros(entry.shape)
            continue
        fan_in = int(np.prod(entry.shape[1:]))
        bound = 1.0 / np.sqrt(fan_in)
        arrays[key] = rng.uniform(-bound, bound, size=entry.shape)
    return ParamSet.from_arrays(spec.manifest, arrays)


def serialize_params(params: ParamSet) -> bytes:
    header = _HEADER.pack(PAYLOAD_MAGIC, PAYLOAD_VERSION, manifest_digest(params.manifest), len(params))
    return header + params.values.astype("<f4").tobytes()


def deserialize_params(payload: bytes, manifest: Sequence[ParamEntry]) -> ParamSet:
    manifest = tuple(manifest)
    if len(payload) < HEADER_SIZE:
        raise CodecError(f"payload of {len(payload)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, digest, count = _HEADER.unpack_from(payload)
    if magic != PAYLOAD_MAGIC:
        raise CodecError(f"bad magic {magic!r}")
    if version != PAYLOAD_VERSION:
        raise CodecError(f"unsupported payload version {version}")
    if digest != manifest_digest(manifest) or count != manifest_size(manifest):
        raise CodecError("payload manifest does not match the expected manifest")
    expected = HEADER_SIZE + BYTES_PER_PARAM * count
    if len(payload) != expected:
        raise CodecError(f"payload is {len(payload)} bytes, expected {expected}")
    values = np.frombuffer(payload, dtype="<f4", offset=HEADER_SIZE).astype(np.float64)
    return ParamSet(values, manifest)
