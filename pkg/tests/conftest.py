import sys
from pathlib import Path

import numpy as np
import yaml

sys.path.insert(0, str(Path(__file__).parent))  # make oracles importable

from prunekit import model_graph, weight_store


def manifest_text(input_spatial, input_channels, layers):
    return yaml.safe_dump(
        {"input_spatial": input_spatial, "input_channels": input_channels,
         "layers": layers},
        sort_keys=False,
    )


def chain(layers):
    """Wire each layer to the next one."""
    for cur, nxt in zip(layers, layers[1:]):
        cur.setdefault("successors", [nxt["name"]])
    layers[-1].setdefault("successors", [])
    return layers


def fc(name, m, n, **kw):
    return {"name": name, "kind": "fc", "in_channels": m, "out_channels": n, **kw}


def conv(name, m, n, kernel=3, stride=1, padding="same", **kw):
    return {"name": name, "kind": "conv", "kernel": kernel, "in_channels": m,
            "out_channels": n, "stride": stride, "padding": padding, **kw}


def parse(input_spatial, input_channels, layers):
    return model_graph.parse_manifest(
        manifest_text(input_spatial, input_channels, chain(layers))
    )


def random_weights_for(graph, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    tensors = []
    for l in graph.layers:
        for tname, dims in weight_store.expected_dims(graph, l.name).items():
            tensors.append(weight_store.tensor(
                tname, scale * rng.standard_normal(dims)))
    return weight_store.container(tensors)


def with_tensor(c, name, data):
    """Copy of a container with one tensor's payload replaced."""
    entries = dict(c.entries)
    entries[name] = weight_store.tensor(name, data)
    return weight_store.WeightContainer(entries=entries)


def random_graph(rng):
    """Small random valid architecture: conv stack with optional batch norm,
    depthwise pairs and identity residual blocks, then fc classifier."""
    spatial = int(rng.choice([4, 6, 8]))
    input_spatial = spatial
    in_ch = int(rng.integers(2, 5))
    layers = []
    counter = [0]

    def fresh(prefix):
        counter[0] += 1
        return f"{prefix}{counter[0]}"

    width = in_ch
    rep = None  # current axis representative (last layer or its batch norm)

    def push(entry):
        nonlocal rep
        if layers:
            layers[-1].setdefault("successors", []).append(entry["name"])
        layers.append(entry)
        rep = entry["name"]

    def maybe_bn(w):
        if rng.random() < 0.4:
            push({"name": fresh("bn"), "kind": "batch_norm",
                  "in_channels": w, "out_channels": w})

    for _ in range(int(rng.integers(1, 4))):
        kind = rng.choice(["conv", "dwpair", "residual"])
        if kind == "conv" or width < 2:
            out = int(rng.integers(2, 9))
            k = int(rng.choice([1, 3]))
            stride = int(rng.choice([1, 2])) if spatial >= 2 else 1
            push(conv(fresh("conv"), width, out, kernel=k, stride=stride,
                      bias=bool(rng.random() < 0.5)))
            spatial = -(-spatial // stride)
            width = out
            maybe_bn(width)
        elif kind == "dwpair":
            push({"name": fresh("dw"), "kind": "depthwise_conv", "kernel": 3,
                  "in_channels": width, "out_channels": width, "stride": 1,
                  "padding": "same"})
            maybe_bn(width)
            out = int(rng.integers(2, 9))
            push({"name": fresh("pw"), "kind": "pointwise_conv",
                  "in_channels": width, "out_channels": out,
                  "bias": bool(rng.random() < 0.5)})
            width = out
            maybe_bn(width)
        else:  # identity residual block on the current axis
            source = rep
            push(conv(fresh("conv"), width, width,
                      bias=bool(rng.random() < 0.5)))
            maybe_bn(width)
            push(conv(fresh("conv"), width, width))
            maybe_bn(width)
            for e in layers:
                if e["name"] == source:
                    e["skip_to"] = rep

    fc_in = width * spatial * spatial
    push(fc(fresh("fc"), fc_in, int(rng.integers(2, 7)),
            bias=bool(rng.random() < 0.5)))
    if rng.random() < 0.5:
        push(fc(fresh("fc"), layers[-1]["out_channels"], int(rng.integers(2, 5))))
    layers[-1].setdefault("successors", [])
    for e in layers:
        e.setdefault("successors", [])
    return model_graph.parse_manifest(manifest_text(input_spatial, in_ch, layers))
