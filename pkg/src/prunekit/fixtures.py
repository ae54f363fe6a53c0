"""Shipped architecture manifests and synthetic weight generation.

Pooling layers carry no parameters, so the classic stacks are written with
the pool folded into the stride of the layer that follows it (the trailing
pool folds into the last conv before the classifier).
"""

from __future__ import annotations

import numpy as np
import yaml

from .errors import ConfigError
from .model_graph import ModelGraph, parse_manifest
from .weight_store import WeightContainer, WeightTensor, container, expected_dims


def _chain(entries: list[dict]) -> list[dict]:
    """Fill each entry's successors with the next layer's name."""
    for cur, nxt in zip(entries, entries[1:]):
        cur.setdefault("successors", [nxt["name"]])
    entries[-1].setdefault("successors", [])
    return entries


def _vgg16(input_spatial: int, classifier: list[dict]) -> dict:
    plan = [
        ("conv1_1", 64, 1), ("conv1_2", 64, 1),
        ("conv2_1", 128, 2), ("conv2_2", 128, 1),
        ("conv3_1", 256, 2), ("conv3_2", 256, 1), ("conv3_3", 256, 1),
        ("conv4_1", 512, 2), ("conv4_2", 512, 1), ("conv4_3", 512, 1),
        ("conv5_1", 512, 2), ("conv5_2", 512, 1), ("conv5_3", 512, 2),
    ]
    entries = []
    in_ch = 3
    for name, out_ch, stride in plan:
        entries.append({
            "name": name, "kind": "conv", "kernel": 3,
            "in_channels": in_ch, "out_channels": out_ch,
            "stride": stride, "padding": "same",
        })
        in_ch = out_ch
    entries.extend(classifier)
    return {
        "input_spatial": input_spatial,
        "input_channels": 3,
        "layers": _chain(entries),
    }


def _vgg16_imagenet() -> dict:
    classifier = [
        {"name": "fc6", "kind": "fc", "in_channels": 512 * 7 * 7, "out_channels": 4096},
        {"name": "fc7", "kind": "fc", "in_channels": 4096, "out_channels": 4096},
        {"name": "fc8", "kind": "fc", "in_channels": 4096, "out_channels": 1000},
    ]
    return _vgg16(224, classifier)


def _vgg16_cifar() -> dict:
    classifier = [
        {"name": "fc", "kind": "fc", "in_channels": 512, "out_channels": 10},
    ]
    return _vgg16(32, classifier)


def _resnet32_cifar() -> dict:
    entries: list[dict] = [
        {"name": "conv1", "kind": "conv", "kernel": 3, "in_channels": 3,
         "out_channels": 16, "stride": 1, "padding": "same", "successors": ["bn1"]},
        {"name": "bn1", "kind": "batch_norm", "in_channels": 16, "out_channels": 16},
    ]
    stage_widths = (16, 32, 64)
    rep = "bn1"  # representative of the running residual axis
    in_ch = 16
    for s, width in enumerate(stage_widths, start=1):
        for b in range(1, 6):
            a, ba = f"conv{s}_{b}a", f"bn{s}_{b}a"
            c, bc = f"conv{s}_{b}b", f"bn{s}_{b}b"
            stride = 2 if (b == 1 and s > 1) else 1
            entries.extend([
                {"name": a, "kind": "conv", "kernel": 3, "in_channels": in_ch,
                 "out_channels": width, "stride": stride, "padding": "same",
                 "successors": [ba]},
                {"name": ba, "kind": "batch_norm", "in_channels": width,
                 "out_channels": width, "successors": [c]},
                {"name": c, "kind": "conv", "kernel": 3, "in_channels": width,
                 "out_channels": width, "stride": 1, "padding": "same",
                 "successors": [bc]},
                {"name": bc, "kind": "batch_norm", "in_channels": width,
                 "out_channels": width},
            ])
            for e in entries:
                if e["name"] == rep:
                    e["successors"] = [a]
                    e["skip_to"] = bc
                    if b == 1 and s > 1:
                        e["projection"] = True
            rep = bc
            in_ch = width
    fc_in = 64 * 8 * 8  # stage-3 maps flattened into the classifier
    for e in entries:
        if e["name"] == rep:
            e["successors"] = ["fc"]
    entries.append({"name": "fc", "kind": "fc", "in_channels": fc_in,
                    "out_channels": 10, "successors": []})
    return {"input_spatial": 32, "input_channels": 3, "layers": entries}


def _mobilenet_cifar() -> dict:
    # (stride, pointwise out width) per depthwise/pointwise pair
    pairs = [
        (1, 64), (2, 128), (1, 128), (2, 256), (1, 256), (2, 512),
        (1, 512), (1, 512), (1, 512), (1, 512), (1, 512),
        (2, 1024), (2, 1024),
    ]
    entries: list[dict] = [
        {"name": "conv1", "kind": "conv", "kernel": 3, "in_channels": 3,
         "out_channels": 32, "stride": 1, "padding": "same"},
        {"name": "bn_conv1", "kind": "batch_norm", "in_channels": 32, "out_channels": 32},
    ]
    in_ch = 32
    for i, (stride, out_ch) in enumerate(pairs, start=1):
        entries.extend([
            {"name": f"dw{i}", "kind": "depthwise_conv", "kernel": 3,
             "in_channels": in_ch, "out_channels": in_ch, "stride": stride,
             "padding": "same"},
            {"name": f"bn_dw{i}", "kind": "batch_norm", "in_channels": in_ch,
             "out_channels": in_ch},
            {"name": f"pw{i}", "kind": "pointwise_conv", "in_channels": in_ch,
             "out_channels": out_ch},
            {"name": f"bn_pw{i}", "kind": "batch_norm", "in_channels": out_ch,
             "out_channels": out_ch},
        ])
        in_ch = out_ch
    entries.append({"name": "fc", "kind": "fc", "in_channels": 1024,
                    "out_channels": 10, "successors": []})
    return {"input_spatial": 32, "input_channels": 3, "layers": _chain(entries)}


_BUILDERS = {
    "vgg16_imagenet": _vgg16_imagenet,
    "vgg16_cifar": _vgg16_cifar,
    "resnet32_cifar": _resnet32_cifar,
    "mobilenet_cifar": _mobilenet_cifar,
}


def fixture_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILDERS))


def fixture_manifest(name: str) -> str:
    """Manifest text for one of the shipped architectures."""
    if name not in _BUILDERS:
        raise ConfigError(f"unknown fixture {name!r}; available: {', '.join(fixture_names())}")
    return yaml.safe_dump(_BUILDERS[name](), sort_keys=False)


def fixture_graph(name: str) -> ModelGraph:
    return parse_manifest(fixture_manifest(name))


def synthesize_weights(graph: ModelGraph, seed: int = 0, scale: float = 0.1) -> WeightContainer:
    """Random float32 weights matching the graph, reproducible from seed."""
    rng = np.random.default_rng(seed)
    tensors = []
    for l in graph.layers:
        for tname, dims in expected_dims(graph, l.name).items():
            if tname.endswith(".gamma"):
                data = 1.0 + scale * rng.standard_normal(dims)
            elif tname.endswith(".var"):
                data = np.abs(1.0 + scale * rng.standard_normal(dims)) + 0.01
            else:
                data = scale * rng.standard_normal(dims)
            tensors.append(WeightTensor(name=tname, data=data.astype(np.float32)))
    return container(tensors)
