"""Builders for the four bundled workloads.

These are linearised stand-ins, not faithful architectures: branches are
flattened into a single path, residual adds are dropped, and depthwise
convolutions are written as Pool layers with the same window (their cost is
one multiply-add per window element per channel, like a pooling window).
Totals land in the right order of magnitude relative to each other.
The JSON files under ``edgepart/data/models`` are generated from here.
"""
from __future__ import annotations

from .dnn import DnnModel, TensorShape, chain


def vgg19() -> DnnModel:
    specs = []
    for width, reps in ((64, 2), (128, 2), (256, 4), (512, 4), (512, 4)):
        specs += [("conv", width, 3, 1, 1)] * reps
        specs.append(("pool", 2, 2, 0))
    specs += [("flatten",), ("dense", 4096), ("dense", 4096), ("dense", 1000)]
    return chain("VGG19", TensorShape(224, 224, 3), specs, compute_intensity=1.0)


def resnet152() -> DnnModel:
    # bottleneck groups with widened inner convolutions so the total tracks the
    # deeper network while staying under 60 layers
    specs = [("conv", 64, 7, 2, 3), ("pool", 3, 2, 1)]
    for stage, (mid, blocks) in enumerate(((104, 3), (208, 4), (416, 6), (832, 3))):
        for b in range(blocks):
            stride = 2 if (stage > 0 and b == 0) else 1
            specs += [("conv", mid, 1, 1, 0), ("conv", mid, 3, stride, 1), ("conv", mid * 4, 1, 1, 0)]
    specs += [("pool", 7, 1, 0), ("flatten",), ("dense", 1000)]
    return chain("ResNet152", TensorShape(224, 224, 3), specs, compute_intensity=1.2)


def inception_v3() -> DnnModel:
    specs = [("conv", 32, 3, 2, 0), ("conv", 32, 3, 1, 0), ("conv", 64, 3, 1, 1), ("pool", 3, 2, 0),
             ("conv", 80, 1, 1, 0), ("conv", 192, 3, 1, 0), ("pool", 3, 2, 0)]
    # each mixed module collapses to reduce -> spatial -> expand
    for out in (256, 288, 288):
        specs += [("conv", 96, 1, 1, 0), ("conv", 128, 3, 1, 1), ("conv", out, 1, 1, 0)]
    specs += [("conv", 768, 3, 2, 0)]
    for _ in range(4):
        specs += [("conv", 192, 1, 1, 0), ("conv", 192, 7, 1, 3), ("conv", 768, 1, 1, 0)]
    specs += [("conv", 1280, 3, 2, 0)]
    for _ in range(2):
        specs += [("conv", 448, 1, 1, 0), ("conv", 384, 3, 1, 1), ("conv", 2048, 1, 1, 0)]
    specs += [("pool", 8, 1, 0), ("flatten",), ("dense", 1000)]
    return chain("InceptionNetV3", TensorShape(299, 299, 3), specs, compute_intensity=1.3)


def efficientnet_b0() -> DnnModel:
    specs = [("conv", 32, 3, 2, 1)]
    channels = 32
    # (expand ratio, kernel, stride, out channels, repeats)
    stages = ((1, 3, 1, 16, 1), (6, 3, 2, 24, 2), (6, 5, 2, 40, 2), (6, 3, 2, 80, 3),
              (6, 5, 1, 112, 3), (6, 5, 2, 192, 4), (6, 3, 1, 320, 1))
    for expand, k, stride, out, reps in stages:
        for r in range(reps):
            s = stride if r == 0 else 1
            if expand != 1:
                specs.append(("conv", channels * expand, 1, 1, 0))
            specs.append(("pool", k, s, k // 2))
            specs.append(("conv", out, 1, 1, 0))
            channels = out
    specs += [("conv", 1280, 1, 1, 0), ("pool", 7, 1, 0), ("flatten",), ("dense", 1000)]
    return chain("EfficientNetB0", TensorShape(224, 224, 3), specs, compute_intensity=2.0)


BUILDERS = {
    "EfficientNetB0": efficientnet_b0,
    "InceptionNetV3": inception_v3,
    "ResNet152": resnet152,
    "VGG19": vgg19,
}
