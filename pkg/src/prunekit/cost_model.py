"""Exact parameter and FLOP accounting, pruning cost regularizers.

Per-layer "size" and "compute" costs cover the weights touched when one
output filter of that layer is pruned: the layer's own weight tensor plus
the weight tensors of every consuming layer.  Dividing by the output width
gives the exact per-filter delta.  FLOPs count 2 per multiply-accumulate;
biases and batch-norm vectors count toward parameters but never FLOPs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, PlanError
from .importance import ImportanceTable
from .model_graph import (
    ModelGraph,
    LayerSpec,
    WEIGHT_KINDS,
    apply_removals_to_shapes,
)

SPATIAL_CONVENTIONS = ("output", "input")


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int          # trainable/stored parameters owned by this layer
    flops: int           # own multiply-accumulate FLOPs
    size_cost: int       # own weights + all consumers' weights (S)
    compute_cost: int    # own FLOPs + all consumers' FLOPs (C)
    out_width: int

    @property
    def delta_params_per_filter(self) -> int:
        return self.size_cost // self.out_width

    @property
    def delta_flops_per_filter(self) -> int:
        return self.compute_cost // self.out_width


@dataclass(frozen=True)
class CostTable:
    layers: dict[str, LayerCost]
    total_params: int
    total_flops: int
    spatial_convention: str = "output"


@dataclass(frozen=True)
class RegularizerTable:
    values: dict[str, float]
    beta: float
    gamma: float


@dataclass(frozen=True)
class Reduction:
    param_reduction: int
    flop_reduction: int
    prr: float
    frr: float


def weight_params(l: LayerSpec) -> int:
    """Weight-tensor parameter count, excluding bias and norm vectors."""
    if l.kind == "fc":
        return l.in_channels * l.out_channels
    if l.kind == "depthwise_conv":
        return l.kernel * l.kernel * l.in_channels
    if l.kind == "batch_norm":
        return 0
    return l.kernel * l.kernel * l.in_channels * l.out_channels


def own_params(l: LayerSpec) -> int:
    """All stored parameters: weights, bias, the four batch-norm vectors."""
    if l.kind == "batch_norm":
        return 4 * l.out_channels
    return weight_params(l) + (l.out_channels if l.bias else 0)


def own_flops(l: LayerSpec, spatial_convention: str = "output") -> int:
    if spatial_convention not in SPATIAL_CONVENTIONS:
        raise ConfigError(
            f"spatial_convention must be one of {SPATIAL_CONVENTIONS}, got {spatial_convention!r}"
        )
    if l.kind == "batch_norm":
        return 0
    if l.kind == "fc":
        return 2 * l.in_channels * l.out_channels
    spatial = l.out_spatial if spatial_convention == "output" else l.in_spatial
    if l.kind == "depthwise_conv":
        return 2 * spatial * spatial * l.kernel * l.kernel * l.in_channels
    return 2 * spatial * spatial * l.kernel * l.kernel * l.in_channels * l.out_channels


def weight_successors(graph: ModelGraph, name: str) -> list[str]:
    """Consuming weight layers, looking through batch_norm entries."""
    out: list[str] = []
    for s in graph.layer(name).successors:
        if graph.layer(s).kind == "batch_norm":
            out.extend(weight_successors(graph, s))
        else:
            out.append(s)
    return out


def layer_costs(graph: ModelGraph, spatial_convention: str = "output") -> CostTable:
    """Own and pruning-coupled costs for every weight layer, plus totals.

    Totals sum every layer once (including batch_norm parameters); the
    coupled costs intentionally count consumer layers again, since those
    are the tensors a filter removal touches.
    """
    for l in graph.layers:
        if l.kind != "fc" and l.out_spatial == 0:
            raise ConfigError(f"layer {l.name!r}: spatial dims not inferred yet")

    rows: dict[str, LayerCost] = {}
    total_params = 0
    total_flops = 0
    for l in graph.layers:
        total_params += own_params(l)
        total_flops += own_flops(l, spatial_convention)
        if l.kind not in WEIGHT_KINDS:
            continue
        succ = weight_successors(graph, l.name)
        size = weight_params(l) + sum(weight_params(graph.layer(s)) for s in succ)
        compute = own_flops(l, spatial_convention) + sum(
            own_flops(graph.layer(s), spatial_convention) for s in succ
        )
        rows[l.name] = LayerCost(
            name=l.name,
            params=own_params(l),
            flops=own_flops(l, spatial_convention),
            size_cost=size,
            compute_cost=compute,
            out_width=l.out_channels,
        )
    return CostTable(
        layers=rows,
        total_params=total_params,
        total_flops=total_flops,
        spatial_convention=spatial_convention,
    )


def regularizer(costs: CostTable, beta: float, gamma: float) -> RegularizerTable:
    """Per-layer pruning bonus favoring compute-heavy (beta) and
    parameter-heavy (gamma) layers.

    Each term is weight * (1 - log(cost) / log(max cost)) over the weight
    layers, so the costliest layer gets bonus 0 and cheaper layers up to
    beta + gamma.  Only log ratios appear, making the result independent
    of the log base.
    """
    if beta < 0 or gamma < 0:
        raise ConfigError("beta and gamma must be non-negative")
    for name, row in costs.layers.items():
        if row.size_cost < 2 or row.compute_cost < 2:
            raise ConfigError(
                f"layer {name!r}: cost below 2 ({row.size_cost} params / "
                f"{row.compute_cost} flops) breaks the log scaling"
            )
    values: dict[str, float] = {}
    if not costs.layers:
        return RegularizerTable(values=values, beta=beta, gamma=gamma)
    max_compute = max(r.compute_cost for r in costs.layers.values())
    max_size = max(r.size_cost for r in costs.layers.values())
    log_max_compute = math.log(max_compute)
    log_max_size = math.log(max_size)
    for name, row in costs.layers.items():
        term_c = beta * (1.0 - math.log(row.compute_cost) / log_max_compute)
        term_s = gamma * (1.0 - math.log(row.size_cost) / log_max_size)
        values[name] = term_c + term_s
    return RegularizerTable(values=values, beta=beta, gamma=gamma)


def regularized_importance(imp: ImportanceTable, reg: RegularizerTable) -> ImportanceTable:
    """Add each scored layer's regularizer to its importance vector."""
    missing = [name for name in imp.scores if name not in reg.values]
    if missing:
        raise ConfigError(f"no regularizer for scored layers {missing}")
    out = ImportanceTable(
        scores=dict(imp.scores),
        top1=dict(imp.top1),
        flags=dict(imp.flags),
        config=dict(imp.config),
    )
    out.config.update({"beta": reg.beta, "gamma": reg.gamma})
    for name, vec in imp.scores.items():
        out.reg[name] = reg.values[name]
        out.reimp[name] = vec + reg.values[name]
    return out


def predict_reduction(graph: ModelGraph, plan, spatial_convention: str = "output") -> Reduction:
    """Exact parameter/FLOP savings of a plan, by recomputing the pruned
    graph's costs and subtracting.

    plan may be a PruningPlan or any mapping from producing layer to
    removed indices.  Layers losing both input and output channels are
    handled exactly because the pruned shapes are rebuilt, not approximated.
    """
    removals = getattr(plan, "removals", plan)
    if not isinstance(removals, dict):
        raise PlanError("plan must be a PruningPlan or a removals mapping")
    before = layer_costs(graph, spatial_convention)
    if not removals:
        return Reduction(0, 0, 0.0, 0.0)
    pruned = apply_removals_to_shapes(graph, removals)
    after = layer_costs(pruned, spatial_convention)
    dp = before.total_params - after.total_params
    df = before.total_flops - after.total_flops
    return Reduction(
        param_reduction=dp,
        flop_reduction=df,
        prr=dp / before.total_params,
        frr=df / before.total_flops,
    )
