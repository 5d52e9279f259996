"""Layer-chain DNN workloads and their analytic compute / data-volume costs.

A model is a strictly linear chain of Conv, Pool, Dense and Flatten layers.
Shapes are propagated from the input tensor at construction time, so a
``DnnModel`` that exists is always geometrically consistent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import GeometryError, ParseError, RangeError, ValidationError

DEFAULT_ELEM_BYTES = 4


class LayerKind(str, Enum):
    CONV = "Conv"
    POOL = "Pool"
    DENSE = "Dense"
    FLATTEN = "Flatten"


SPATIAL_KINDS = (LayerKind.CONV, LayerKind.POOL)


@dataclass(frozen=True)
class TensorShape:
    height: int
    width: int
    channels: int
    elem_bytes: int = DEFAULT_ELEM_BYTES

    def __post_init__(self):
        for name in ("height", "width", "channels", "elem_bytes"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValidationError(f"TensorShape.{name} must be a positive integer, got {v!r}")

    @property
    def numel(self) -> int:
        return self.height * self.width * self.channels


@dataclass(frozen=True)
class Layer:
    kind: LayerKind
    in_channels: int
    out_channels: int
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    id: int = 0

    def __post_init__(self):
        kind = self.kind if isinstance(self.kind, LayerKind) else _parse_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValidationError(f"layer {self.id}: channel counts must be >= 1")
        if kind in SPATIAL_KINDS:
            if self.kernel < 1 or self.stride < 1:
                raise ValidationError(f"layer {self.id}: kernel and stride must be >= 1")
            if self.padding < 0:
                raise ValidationError(f"layer {self.id}: padding must be >= 0")
        elif (self.kernel, self.stride, self.padding) != (1, 1, 0):
            raise ValidationError(f"layer {self.id}: {kind.value} takes no kernel/stride/padding")
        if kind is LayerKind.POOL and self.in_channels != self.out_channels:
            raise ValidationError(f"layer {self.id}: Pool cannot change channel count")


def _parse_kind(value) -> LayerKind:
    try:
        return LayerKind(value)
    except ValueError:
        raise ValidationError(f"unknown layer kind {value!r}") from None


def tensor_bytes(shape: TensorShape) -> int:
    return shape.height * shape.width * shape.channels * shape.elem_bytes


def layer_out_shape(layer: Layer, shape: TensorShape) -> TensorShape:
    """Output shape of ``layer`` applied to a tensor of ``shape``."""
    if layer.kind in SPATIAL_KINDS:
        if shape.channels != layer.in_channels:
            raise ValidationError(
                f"layer {layer.id}: expects {layer.in_channels} input channels, got {shape.channels}")
        h = (shape.height + 2 * layer.padding - layer.kernel) // layer.stride + 1
        w = (shape.width + 2 * layer.padding - layer.kernel) // layer.stride + 1
        if h < 1 or w < 1:
            raise GeometryError(
                f"layer {layer.id}: kernel {layer.kernel} does not fit a "
                f"{shape.height}x{shape.width} input with padding {layer.padding}")
        return TensorShape(h, w, layer.out_channels, shape.elem_bytes)
    if layer.kind is LayerKind.FLATTEN:
        if shape.channels != layer.in_channels or shape.numel != layer.out_channels:
            raise ValidationError(
                f"layer {layer.id}: Flatten of {shape.height}x{shape.width}x{shape.channels} "
                f"must declare {shape.channels}->{shape.numel}")
        return TensorShape(1, 1, layer.out_channels, shape.elem_bytes)
    # Dense flattens implicitly: in_channels counts input features.
    if shape.numel != layer.in_channels:
        raise ValidationError(
            f"layer {layer.id}: Dense expects {layer.in_channels} features, got {shape.numel}")
    return TensorShape(1, 1, layer.out_channels, shape.elem_bytes)


def layer_flops(layer: Layer, shape: TensorShape) -> int:
    """Floating-point operations of one layer (2 per MAC, window size for pooling)."""
    out = layer_out_shape(layer, shape)
    k2 = layer.kernel * layer.kernel
    if layer.kind is LayerKind.CONV:
        return 2 * k2 * layer.in_channels * layer.out_channels * out.height * out.width
    if layer.kind is LayerKind.POOL:
        return k2 * out.channels * out.height * out.width
    if layer.kind is LayerKind.DENSE:
        return 2 * layer.in_channels * layer.out_channels
    return 0


def halo_bytes(layer: Layer, shape: TensorShape) -> int:
    """Overlap rows a spatial split must exchange per interior boundary for this layer."""
    if layer.kind not in SPATIAL_KINDS or layer.kernel <= 1:
        return 0
    return (layer.kernel - 1) * shape.width * layer.in_channels * shape.elem_bytes


@dataclass(frozen=True)
class DnnModel:
    name: str
    layers: tuple[Layer, ...]
    input_shape: TensorShape
    compute_intensity: float = 1.0

    def __post_init__(self):
        if not self.layers:
            raise ValidationError(f"model {self.name!r} has no layers")
        if not self.compute_intensity > 0:
            raise ValidationError("compute_intensity must be > 0")
        layers = tuple(replace(l, id=i) if l.id != i else l for i, l in enumerate(self.layers))
        object.__setattr__(self, "layers", layers)
        # propagate now so an invalid chain never escapes the constructor
        self.shapes  # noqa: B018

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @cached_property
    def shapes(self) -> tuple[TensorShape, ...]:
        """Input shape of every layer followed by the final output shape."""
        out = [self.input_shape]
        for layer in self.layers:
            out.append(layer_out_shape(layer, out[-1]))
        return tuple(out)

    @cached_property
    def flops(self) -> np.ndarray:
        return np.array([layer_flops(l, s) for l, s in zip(self.layers, self.shapes)], dtype=float)

    @property
    def total_flops(self) -> float:
        return float(self.flops.sum())

    @cached_property
    def boundary_bytes(self) -> np.ndarray:
        """Bytes crossing each cut point; entry ``i`` is the input of layer ``i``."""
        return np.array([tensor_bytes(s) for s in self.shapes], dtype=float)

    @cached_property
    def halo(self) -> np.ndarray:
        return np.array([halo_bytes(l, s) for l, s in zip(self.layers, self.shapes)], dtype=float)

    def costs(self):
        from .cost import LayerCosts

        return LayerCosts.from_arrays(self.flops, self.boundary_bytes[1:],
                                      in_bytes=self.boundary_bytes[0], halo=self.halo)

    def with_input_size(self, height: int, width: int) -> "DnnModel":
        """Re-derive the chain for another input resolution.

        Flatten layers and the Dense layer consuming them are resized to the new
        feature count; everything else must still fit or GeometryError is raised.
        """
        if (height, width) == (self.input_shape.height, self.input_shape.width):
            return self
        shape = replace(self.input_shape, height=height, width=width)
        layers = []
        for layer in self.layers:
            if layer.kind is LayerKind.FLATTEN:
                layer = replace(layer, out_channels=shape.numel)
            elif layer.kind is LayerKind.DENSE and shape.numel != layer.in_channels:
                layer = replace(layer, in_channels=shape.numel)
            shape = layer_out_shape(layer, shape)
            layers.append(layer)
        return replace(self, layers=tuple(layers), input_shape=replace(self.input_shape, height=height, width=width))


def block_flops(model: DnnModel, start: int, stop: int) -> float:
    """Sum of layer flops over ``[start, stop)``."""
    if not (0 <= start < stop <= model.n_layers):
        raise RangeError(f"invalid layer range [{start}, {stop}) for {model.n_layers} layers")
    return float(model.flops[start:stop].sum())


# -- model-spec documents -------------------------------------------------

_LAYER_KEYS = {"kind", "kernel", "stride", "padding", "in_channels", "out_channels"}


def model_from_dict(doc: dict) -> DnnModel:
    try:
        inp = doc["input"]
        shape = TensorShape(int(inp["h"]), int(inp.get("w", inp["h"])), int(inp["c"]),
                            int(inp.get("elem_bytes", DEFAULT_ELEM_BYTES)))
        layers = []
        for i, ld in enumerate(doc["layers"]):
            extra = set(ld) - _LAYER_KEYS
            if extra:
                raise ValidationError(f"layer {i}: unknown fields {sorted(extra)}")
            layers.append(Layer(kind=_parse_kind(ld["kind"]),
                                in_channels=int(ld["in_channels"]),
                                out_channels=int(ld["out_channels"]),
                                kernel=int(ld.get("kernel", 1)),
                                stride=int(ld.get("stride", 1)),
                                padding=int(ld.get("padding", 0)),
                                id=i))
        return DnnModel(name=str(doc["name"]), layers=tuple(layers), input_shape=shape,
                        compute_intensity=float(doc.get("compute_intensity", 1.0)))
    except (KeyError, TypeError) as exc:
        raise ParseError(f"malformed model spec: missing or mistyped field {exc}") from None


def load_model_spec(text: str) -> DnnModel:
    """Parse a JSON model-spec document into a validated ``DnnModel``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"model spec is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("model spec must be a JSON object")
    return model_from_dict(doc)


def model_to_dict(model: DnnModel) -> dict:
    s = model.input_shape
    layers = []
    for l in model.layers:
        d = {"kind": l.kind.value, "in_channels": l.in_channels, "out_channels": l.out_channels}
        if l.kind in SPATIAL_KINDS:
            d.update(kernel=l.kernel, stride=l.stride, padding=l.padding)
        layers.append(d)
    return {"name": model.name,
            "input": {"h": s.height, "w": s.width, "c": s.channels, "elem_bytes": s.elem_bytes},
            "compute_intensity": model.compute_intensity,
            "layers": layers}


def dump_model_spec(model: DnnModel) -> str:
    return json.dumps(model_to_dict(model), indent=1)


def load_model_dir(path: str | Path) -> dict[str, DnnModel]:
    models = {}
    for p in sorted(Path(path).glob("*.json")):
        m = load_model_spec(p.read_text())
        models[m.name] = m
    return models


BUNDLED_MODELS = ("EfficientNetB0", "InceptionNetV3", "ResNet152", "VGG19")


def bundled_models() -> dict[str, DnnModel]:
    root = resources.files("edgepart") / "data" / "models"
    return {name: load_model_spec((root / f"{name}.json").read_text()) for name in BUNDLED_MODELS}


def chain(name: str, input_shape: TensorShape, specs: Iterable[Sequence], compute_intensity: float = 1.0) -> DnnModel:
    """Build a model from terse tuples: ``("conv", cout, k, s, p)``, ``("pool", k, s, p)``,
    ``("flatten",)``, ``("dense", out)``. Input channel counts are inferred."""
    layers = []
    shape = input_shape
    for spec in specs:
        kind, *args = spec
        if kind == "conv":
            cout, k, s, p = args
            layer = Layer(LayerKind.CONV, shape.channels, cout, k, s, p)
        elif kind == "pool":
            k, s, p = args
            layer = Layer(LayerKind.POOL, shape.channels, shape.channels, k, s, p)
        elif kind == "flatten":
            layer = Layer(LayerKind.FLATTEN, shape.channels, shape.numel)
        elif kind == "dense":
            layer = Layer(LayerKind.DENSE, shape.numel, args[0])
        else:
            raise ValidationError(f"unknown layer tuple {spec!r}")
        layers.append(layer)
        shape = layer_out_shape(layer, shape)
    return DnnModel(name, tuple(layers), input_shape, compute_intensity)
