"""Architecture manifests: layer shapes, connectivity, and pruning-coupling groups.

A manifest is a YAML document listing prunable layers in evaluation order.
Pooling carries no parameters and is folded into the stride of the consuming
layer, so the graph contains only layers that own weight tensors (plus
batch_norm entries, which prune in lockstep with their producing layer).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Iterable, Mapping

import yaml

from .errors import ManifestError, PlanError

KINDS = ("conv", "fc", "depthwise_conv", "pointwise_conv", "batch_norm")
PADDINGS = ("same", "valid")
# layers that own a weight matrix/tensor (batch_norm owns only per-channel vectors)
WEIGHT_KINDS = ("conv", "fc", "depthwise_conv", "pointwise_conv")
# layers whose input-channel slices are scored for redundancy
SCORING_KINDS = ("conv", "fc", "pointwise_conv")

_LAYER_FIELDS = {
    "name", "kind", "kernel", "in_channels", "out_channels",
    "stride", "padding", "successors", "bias", "skip_to", "projection",
}
_REQUIRED_FIELDS = ("name", "kind", "in_channels", "out_channels")


@dataclass(frozen=True)
class LayerSpec:
    """Shape and wiring of one layer.

    in_spatial/out_spatial are 0 until spatial inference runs; fc and
    batch_norm layers use kernel 1 and fc layers use spatial size 1.
    """

    name: str
    kind: str
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: str = "same"
    successors: tuple[str, ...] = ()
    bias: bool = False
    skip_to: str | None = None
    projection: bool = False
    in_spatial: int = 0
    out_spatial: int = 0
    prunable: bool = True


@dataclass(frozen=True)
class CouplingGroup:
    """Channel axes that must be pruned with one identical index set.

    members lists the producing (layer, "output") axes, ordered by layer
    position.  Attached batch_norm layers and consuming input axes follow
    the group implicitly and are kept separately for surgery.
    """

    members: tuple[tuple[str, str], ...]
    width: int
    prunable: bool
    consumers: tuple[str, ...] = ()
    batch_norms: tuple[str, ...] = ()
    flatten_consumers: tuple[tuple[str, int], ...] = ()
    blocked_reason: str = ""


@dataclass(frozen=True)
class ModelGraph:
    """Ordered, validated collection of LayerSpecs."""

    layers: tuple[LayerSpec, ...]
    input_spatial: int
    input_channels: int

    def index(self, name: str) -> int:
        try:
            return _name_index(self.layers)[name]
        except KeyError:
            raise ManifestError(f"unknown layer {name!r}") from None

    def layer(self, name: str) -> LayerSpec:
        return self.layers[self.index(name)]

    def predecessors(self, name: str) -> tuple[str, ...]:
        return _predecessor_map(self.layers).get(name, ())

    def output_layer(self) -> LayerSpec:
        sinks = [l for l in self.layers if not l.successors and l.skip_to is None]
        if len(sinks) != 1:
            raise ManifestError(
                f"expected exactly one output layer, found {[l.name for l in sinks]}"
            )
        return sinks[0]

    def roots(self) -> tuple[LayerSpec, ...]:
        preds = _predecessor_map(self.layers)
        return tuple(l for l in self.layers if not preds.get(l.name))


@lru_cache(maxsize=128)
def _name_index(layers: tuple[LayerSpec, ...]) -> dict[str, int]:
    return {l.name: i for i, l in enumerate(layers)}


@lru_cache(maxsize=128)
def _predecessor_map(layers: tuple[LayerSpec, ...]) -> dict[str, tuple[str, ...]]:
    preds: dict[str, list[str]] = {}
    for l in layers:
        for s in l.successors:
            preds.setdefault(s, []).append(l.name)
    return {k: tuple(v) for k, v in preds.items()}


def is_flatten_edge(src: LayerSpec, dst: LayerSpec) -> bool:
    """True when src feeds dst through a channel-major spatial flatten."""
    if dst.kind != "fc":
        return False
    if src.out_spatial <= 1:
        return False
    return dst.in_channels == src.out_channels * src.out_spatial**2


def conv_out_spatial(in_spatial: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-in_spatial // stride)
    if in_spatial < kernel:
        raise ManifestError(
            f"valid-padding kernel {kernel} does not fit spatial size {in_spatial}"
        )
    return (in_spatial - kernel) // stride + 1


# ---------------------------------------------------------------------------
# parsing and validation


def _parse_layer(entry: object, pos: int) -> LayerSpec:
    if not isinstance(entry, dict):
        raise ManifestError(f"layers[{pos}] is not a mapping")
    unknown = set(entry) - _LAYER_FIELDS
    if unknown:
        raise ManifestError(f"layers[{pos}] has unknown fields {sorted(unknown)}")
    for f in _REQUIRED_FIELDS:
        if f not in entry:
            raise ManifestError(f"layers[{pos}] missing required field {f!r}")

    name = entry["name"]
    kind = entry["kind"]
    if not isinstance(name, str) or not name:
        raise ManifestError(f"layers[{pos}] name must be a non-empty string")
    if kind not in KINDS:
        raise ManifestError(f"layer {name!r}: unknown kind {kind!r}")

    def _pos_int(key: str, default: int | None = None) -> int:
        v = entry.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ManifestError(f"layer {name!r}: {key} must be a positive integer")
        return v

    kernel = _pos_int("kernel", 1)
    stride = _pos_int("stride", 1)
    in_channels = _pos_int("in_channels")
    out_channels = _pos_int("out_channels")
    padding = entry.get("padding", "same")
    if padding not in PADDINGS:
        raise ManifestError(f"layer {name!r}: padding must be one of {PADDINGS}")
    successors = entry.get("successors", [])
    if not isinstance(successors, list) or not all(isinstance(s, str) for s in successors):
        raise ManifestError(f"layer {name!r}: successors must be a list of layer names")
    bias = entry.get("bias", False)
    projection = entry.get("projection", False)
    skip_to = entry.get("skip_to")
    if not isinstance(bias, bool) or not isinstance(projection, bool):
        raise ManifestError(f"layer {name!r}: bias/projection must be booleans")
    if skip_to is not None and not isinstance(skip_to, str):
        raise ManifestError(f"layer {name!r}: skip_to must be a layer name")

    if kind in ("fc", "pointwise_conv", "batch_norm") and kernel != 1:
        raise ManifestError(f"layer {name!r}: kind {kind} requires kernel 1")
    if kind in ("depthwise_conv", "batch_norm") and in_channels != out_channels:
        raise ManifestError(
            f"layer {name!r}: kind {kind} requires in_channels == out_channels"
        )
    if kind == "batch_norm" and (bias or stride != 1):
        raise ManifestError(f"layer {name!r}: batch_norm takes no bias and stride 1")

    return LayerSpec(
        name=name,
        kind=kind,
        kernel=kernel,
        in_channels=in_channels,
        out_channels=out_channels,
        stride=stride,
        padding=padding,
        successors=tuple(successors),
        bias=bias,
        skip_to=skip_to,
        projection=projection,
        prunable=kind != "batch_norm",
    )


def parse_manifest(text: str) -> ModelGraph:
    """Parse and fully validate a manifest document.

    Spatial sizes are inferred as part of parsing, so the returned graph
    is ready for cost evaluation.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ManifestError(f"manifest is not valid YAML: {e}") from e
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a mapping")
    unknown = set(doc) - {"input_spatial", "input_channels", "layers"}
    if unknown:
        raise ManifestError(f"unknown top-level fields {sorted(unknown)}")
    for key in ("input_spatial", "input_channels", "layers"):
        if key not in doc:
            raise ManifestError(f"missing top-level field {key!r}")
    input_spatial = doc["input_spatial"]
    input_channels = doc["input_channels"]
    for key, v in (("input_spatial", input_spatial), ("input_channels", input_channels)):
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ManifestError(f"{key} must be a positive integer")
    raw_layers = doc["layers"]
    if not isinstance(raw_layers, list) or not raw_layers:
        raise ManifestError("layers must be a non-empty list")

    layers = tuple(_parse_layer(e, i) for i, e in enumerate(raw_layers))
    seen: set[str] = set()
    for l in layers:
        if l.name in seen:
            raise ManifestError(f"duplicate layer name {l.name!r}")
        seen.add(l.name)

    graph = ModelGraph(layers=layers, input_spatial=input_spatial,
                       input_channels=input_channels)
    _validate_structure(graph)
    graph = infer_spatial_dims(graph)
    _validate_edges(graph)
    graph.output_layer()
    return graph


def _validate_structure(graph: ModelGraph) -> None:
    names = _name_index(graph.layers)
    for l in graph.layers:
        if len(set(l.successors)) != len(l.successors):
            raise ManifestError(f"layer {l.name!r}: duplicate successor entry")
        for s in l.successors:
            if s not in names:
                raise ManifestError(f"layer {l.name!r}: unknown successor {s!r}")
            if s == l.name:
                raise ManifestError(f"layer {l.name!r}: self-loop successor")
        if l.skip_to is not None:
            if l.skip_to not in names:
                raise ManifestError(f"layer {l.name!r}: unknown skip_to {l.skip_to!r}")
            if l.skip_to == l.name:
                raise ManifestError(f"layer {l.name!r}: skip_to itself")
    _topological_order(graph)


def _topological_order(graph: ModelGraph) -> list[str]:
    indeg = {l.name: 0 for l in graph.layers}
    for l in graph.layers:
        for s in l.successors:
            indeg[s] += 1
    order: list[str] = []
    ready = [l.name for l in graph.layers if indeg[l.name] == 0]
    while ready:
        n = ready.pop(0)
        order.append(n)
        for s in graph.layer(n).successors:
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    if len(order) != len(graph.layers):
        cyclic = sorted(n for n, d in indeg.items() if d > 0)
        raise ManifestError(f"cyclic non-skip edge through {cyclic}")
    return order


def infer_spatial_dims(graph: ModelGraph) -> ModelGraph:
    """Populate in_spatial/out_spatial on every layer. Idempotent."""
    order = _topological_order(graph)
    preds = _predecessor_map(graph.layers)
    spatial: dict[str, tuple[int, int]] = {}

    for name in order:
        l = graph.layer(name)
        p = preds.get(name, ())
        if l.kind == "fc":
            inp = 1
        elif not p:
            inp = graph.input_spatial
        else:
            sizes = {spatial[q][1] for q in p}
            if len(sizes) != 1:
                raise ManifestError(
                    f"layer {name!r}: predecessors disagree on spatial size {sorted(sizes)}"
                )
            inp = sizes.pop()
        if l.kind == "fc":
            out = 1
        elif l.kind == "batch_norm":
            out = inp
        else:
            out = conv_out_spatial(inp, l.kernel, l.stride, l.padding)
        if inp < 1 or out < 1:
            raise ManifestError(f"layer {name!r}: non-positive spatial size")
        spatial[name] = (inp, out)

    new_layers = tuple(
        replace(l, in_spatial=spatial[l.name][0], out_spatial=spatial[l.name][1])
        for l in graph.layers
    )
    return ModelGraph(layers=new_layers, input_spatial=graph.input_spatial,
                      input_channels=graph.input_channels)


def _validate_edges(graph: ModelGraph) -> None:
    preds = _predecessor_map(graph.layers)
    for l in graph.layers:
        if not preds.get(l.name):
            expected = graph.input_channels
            if l.kind == "fc" and graph.input_spatial > 1:
                expected = graph.input_channels * graph.input_spatial**2
            if l.in_channels != expected:
                raise ManifestError(
                    f"layer {l.name!r}: in_channels {l.in_channels} does not match "
                    f"network input ({expected})"
                )
        for s in l.successors:
            dst = graph.layer(s)
            if is_flatten_edge(l, dst):
                continue
            if dst.in_channels != l.out_channels:
                raise ManifestError(
                    f"shape inconsistency on edge {l.name} -> {dst.name}: "
                    f"{l.out_channels} out vs {dst.in_channels} in"
                    + (
                        f" (flatten would need {l.out_channels * l.out_spatial ** 2})"
                        if dst.kind == "fc" and l.out_spatial > 1
                        else ""
                    )
                )
        if l.skip_to is not None:
            tgt = graph.layer(l.skip_to)
            if not l.projection:
                if tgt.out_channels != l.out_channels:
                    raise ManifestError(
                        f"residual skip {l.name} -> {tgt.name} joins widths "
                        f"{l.out_channels} vs {tgt.out_channels} without a projection"
                    )
                if tgt.out_spatial != l.out_spatial:
                    raise ManifestError(
                        f"residual skip {l.name} -> {tgt.name} joins spatial sizes "
                        f"{l.out_spatial} vs {tgt.out_spatial}"
                    )


def serialize_manifest(graph: ModelGraph) -> str:
    """Canonical manifest text; parse(serialize(g)) equals g."""
    layers = []
    for l in graph.layers:
        entry: dict[str, object] = {
            "name": l.name,
            "kind": l.kind,
            "kernel": l.kernel,
            "in_channels": l.in_channels,
            "out_channels": l.out_channels,
            "stride": l.stride,
            "padding": l.padding,
            "successors": list(l.successors),
        }
        if l.bias:
            entry["bias"] = True
        if l.skip_to is not None:
            entry["skip_to"] = l.skip_to
        if l.projection:
            entry["projection"] = True
        layers.append(entry)
    doc = {
        "input_spatial": graph.input_spatial,
        "input_channels": graph.input_channels,
        "layers": layers,
    }
    return yaml.safe_dump(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# coupling groups


class _UnionFind:
    def __init__(self) -> None:
        self.parent: dict[object, object] = {}

    def find(self, x: object) -> object:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: object, b: object) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


def coupling_groups(graph: ModelGraph) -> list[CouplingGroup]:
    """Partition channel axes into groups pruned with identical index sets.

    Identity skips merge the joined output axes (transitively along chained
    blocks); depthwise and batch_norm layers tie their input axis to their
    output axis, so they follow the producing layer.  Everything else is a
    singleton group.
    """
    uf = _UnionFind()
    for l in graph.layers:
        uf.find((l.name, "output"))
        uf.find((l.name, "input"))
        if l.kind in ("depthwise_conv", "batch_norm"):
            uf.union((l.name, "input"), (l.name, "output"))
        for s in l.successors:
            if not is_flatten_edge(l, graph.layer(s)):
                uf.union((l.name, "output"), (s, "input"))
        if l.skip_to is not None and not l.projection:
            uf.union((l.name, "output"), (l.skip_to, "output"))

    classes: dict[object, list[tuple[str, str]]] = {}
    for l in graph.layers:
        for side in ("input", "output"):
            classes.setdefault(uf.find((l.name, side)), []).append((l.name, side))

    preds = _predecessor_map(graph.layers)
    output_layer = graph.output_layer().name
    groups: list[CouplingGroup] = []
    for refs in classes.values():
        producers = [
            (n, s) for n, s in refs
            if s == "output" and graph.layer(n).kind != "batch_norm"
        ]
        if not producers:
            continue  # network-input axis: no producing layer, never prunable
        producers.sort(key=lambda r: graph.index(r[0]))
        width = {graph.layer(n).out_channels for n, _ in producers}
        if len(width) != 1:
            raise ManifestError(
                f"coupled axes {sorted(n for n, _ in producers)} have unequal widths"
            )
        batch_norms = tuple(sorted(
            (n for n, s in refs if s == "output" and graph.layer(n).kind == "batch_norm"),
            key=graph.index,
        ))
        consumers = tuple(sorted(
            {n for n, s in refs
             if s == "input" and graph.layer(n).kind not in ("batch_norm", "depthwise_conv")},
            key=graph.index,
        ))
        flatten = []
        for n, _ in producers:
            pl = graph.layer(n)
            for s in pl.successors:
                if is_flatten_edge(pl, graph.layer(s)):
                    flatten.append((s, pl.out_spatial))
        for bn in batch_norms:
            bl = graph.layer(bn)
            for s in bl.successors:
                if is_flatten_edge(bl, graph.layer(s)):
                    flatten.append((s, bl.out_spatial))

        touches_input = any(
            s == "input" and not preds.get(n) for n, s in refs
        )
        blocked = ""
        if touches_input:
            blocked = "network input axis"
        elif any(n == output_layer for n, s in refs if s == "output"):
            blocked = "network output axis"
        elif width == {1}:
            blocked = "single-channel axis"
        else:
            scorers = _scoring_consumers(graph, consumers, flatten)
            if not scorers:
                blocked = "no layer to score this axis from"
        groups.append(CouplingGroup(
            members=tuple(producers),
            width=width.pop(),
            prunable=not blocked,
            consumers=consumers,
            batch_norms=batch_norms,
            flatten_consumers=tuple(sorted(set(flatten))),
            blocked_reason=blocked,
        ))

    groups.sort(key=lambda g: graph.index(g.members[0][0]))
    return groups


def _scoring_consumers(
    graph: ModelGraph,
    consumers: Iterable[str],
    flatten: Iterable[tuple[str, int]],
) -> list[str]:
    out = []
    for n in consumers:
        l = graph.layer(n)
        if l.kind in SCORING_KINDS and l.in_channels >= 2 and l.out_channels >= 2:
            out.append(n)
    for n, _spatial in flatten:
        if graph.layer(n).out_channels >= 2:
            out.append(n)
    return out


# ---------------------------------------------------------------------------
# shape surgery (shared by plan prediction and plan application)


def apply_removals_to_shapes(
    graph: ModelGraph, removals: Mapping[str, frozenset[int] | set[int] | tuple[int, ...]]
) -> ModelGraph:
    """Return a revalidated graph with the removed output channels dropped.

    removals maps producing layers (coupling-group members) to the channel
    indices removed from their output axis.  Consumer input widths and
    batch_norm widths are recomputed from their predecessors.
    """
    sets: dict[str, frozenset[int]] = {}
    for name, idx in removals.items():
        l = graph.layer(name)  # raises ManifestError on unknown layer
        s = frozenset(idx)
        bad = [i for i in s if not (0 <= i < l.out_channels)]
        if bad:
            raise PlanError(
                f"layer {name!r}: removal indices {sorted(bad)} out of range "
                f"for width {l.out_channels}"
            )
        if len(s) >= l.out_channels:
            raise PlanError(f"layer {name!r}: plan would remove every channel")
        sets[name] = s

    preds = _predecessor_map(graph.layers)
    order = _topological_order(graph)
    new_out: dict[str, int] = {}
    new_in: dict[str, int] = {}
    for name in order:
        l = graph.layer(name)
        p = preds.get(name, ())
        if not p:
            new_in[name] = l.in_channels
        else:
            src = graph.layer(p[0])
            if is_flatten_edge(src, l):
                new_in[name] = new_out[src.name] * src.out_spatial**2
            else:
                new_in[name] = new_out[src.name]
        removed = len(sets.get(name, ()))
        if l.kind in ("batch_norm", "depthwise_conv"):
            # follows its input axis; an explicit entry must agree
            if name in sets and new_in[name] != l.out_channels - removed:
                raise PlanError(f"layer {name!r}: removal set disagrees with its input axis")
            new_out[name] = new_in[name]
        else:
            new_out[name] = l.out_channels - removed

    new_layers = tuple(
        replace(l, in_channels=new_in[l.name], out_channels=new_out[l.name])
        for l in graph.layers
    )
    pruned = ModelGraph(new_layers, graph.input_spatial, graph.input_channels)
    pruned = infer_spatial_dims(pruned)
    _validate_edges(pruned)
    return pruned
