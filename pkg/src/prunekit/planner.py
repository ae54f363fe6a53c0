"""Global filter ranking and pruning plans.

A scoring unit is one channel of a coupling group: pruning it removes the
producing filter(s) and the matching input slice of every consumer.  Units
are ranked network-wide by regularized importance; the lowest-ranked units
fill the requested ratio.  Application slices the weight tensors and
revalidates the graph, so predicted and realized savings must agree
exactly.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import yaml

from . import cost_model, importance, weight_store
from .errors import ConfigError, PlanError
from .importance import ImportanceTable
from .model_graph import (
    CouplingGroup,
    ModelGraph,
    apply_removals_to_shapes,
    coupling_groups,
)

GROUP_QUOTAS = ("width", "unit")

PLAN_FORMAT = "prunekit-plan/1"


@dataclass(frozen=True)
class PlanConfig:
    ratio: float = 0.0
    detector: str = "correlation"
    normalization: str = "max"
    k: int = 3
    beta: float = 0.0
    gamma: float = 0.0
    spatial_convention: str = "output"
    signed_mode: str = "abs"
    group_quota: str = "width"
    workers: int = 1

    def validate(self) -> None:
        if not 0.0 <= self.ratio < 1.0:
            raise ConfigError(f"ratio must be in [0, 1), got {self.ratio}")
        if self.detector not in importance.DETECTORS:
            raise ConfigError(f"unknown detector {self.detector!r}")
        if self.normalization not in importance.NORMALIZATIONS:
            raise ConfigError(f"unknown normalization {self.normalization!r}")
        if self.signed_mode not in importance.SIGNED_MODES:
            raise ConfigError(f"unknown signed_mode {self.signed_mode!r}")
        if self.spatial_convention not in cost_model.SPATIAL_CONVENTIONS:
            raise ConfigError(f"unknown spatial_convention {self.spatial_convention!r}")
        if self.group_quota not in GROUP_QUOTAS:
            raise ConfigError(f"unknown group_quota {self.group_quota!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be non-negative")


@dataclass(frozen=True)
class PruningPlan:
    """Per-axis removal sets plus the accounting that justified them."""

    removals: dict[str, tuple[int, ...]]
    original_widths: dict[str, int]
    requested_ratio: float
    achieved_ratio: float
    predicted: cost_model.Reduction
    config: PlanConfig


# ---------------------------------------------------------------------------
# scoring


def _scoring_tensor(graph: ModelGraph, container, consumer: str, flatten_spatial: int | None):
    """Weight view whose input axis matches the scored channel axis.

    For a flatten-fed fc layer the [rows, N] weight is regrouped into a
    [O, O, channels, N] tensor so each channel is compared across its O*O
    spatial positions, mirroring how conv kernels are compared per
    position.
    """
    l = graph.layer(consumer)
    w = container[consumer].data
    if flatten_spatial is None:
        return w
    o2 = flatten_spatial * flatten_spatial
    channels = l.in_channels // o2
    # rows are channel-major: row = channel * O^2 + position
    return np.transpose(w.reshape(channels, o2, l.out_channels), (1, 0, 2)).reshape(
        flatten_spatial, flatten_spatial, channels, l.out_channels
    )


def score_graph(
    graph: ModelGraph,
    container: weight_store.WeightContainer,
    config: PlanConfig = PlanConfig(),
) -> ImportanceTable:
    """Importance vectors for every scoring consumer of a prunable group.

    Layer results are independent, so they may be computed on a thread
    pool; each layer's own reduction runs in a fixed order, making the
    table identical for any worker count.
    """
    config.validate()
    weight_store.validate_container(graph, container)
    groups = coupling_groups(graph)

    jobs: list[tuple[str, int | None]] = []
    seen: set[tuple[str, int | None]] = set()
    for g in groups:
        if not g.prunable:
            continue
        for consumer, flatten_spatial in _scorers(graph, g):
            key = (consumer, flatten_spatial)
            if key not in seen:
                seen.add(key)
                jobs.append(key)

    def run(job: tuple[str, int | None]):
        consumer, flatten_spatial = job
        w = _scoring_tensor(graph, container, consumer, flatten_spatial)
        sim = importance.similarity_matrix(
            w, detector=config.detector, signed_mode=config.signed_mode, layer=consumer
        )
        sim = importance.normalize(sim, config.normalization)
        return (
            importance.topk_importance(sim, config.k),
            importance.top1_similarity(sim),
            sim.flags,
        )

    if config.workers == 1:
        results = {job: run(job) for job in jobs}
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = dict(zip(jobs, pool.map(run, jobs)))

    table = ImportanceTable(config={
        "detector": config.detector,
        "normalization": config.normalization,
        "k": config.k,
        "signed_mode": config.signed_mode,
        "beta": config.beta,
        "gamma": config.gamma,
    })
    for job in jobs:  # graph order, independent of completion order
        consumer, _ = job
        scores, top1, flags = results[job]
        table.scores[consumer] = scores
        table.top1[consumer] = top1
        if flags:
            table.flags[consumer] = flags
    return table


def _scorers(graph: ModelGraph, group: CouplingGroup) -> list[tuple[str, int | None]]:
    """(consumer, flatten_spatial) pairs whose importance scores this group."""
    out: list[tuple[str, int | None]] = []
    for name in group.consumers:
        l = graph.layer(name)
        if l.kind in ("conv", "fc", "pointwise_conv") and l.in_channels >= 2 and l.out_channels >= 2:
            out.append((name, None))
    for name, spatial in group.flatten_consumers:
        if graph.layer(name).out_channels >= 2:
            out.append((name, spatial))
    return out


def regularized_table(
    graph: ModelGraph,
    container: weight_store.WeightContainer,
    config: PlanConfig = PlanConfig(),
) -> tuple[ImportanceTable, cost_model.CostTable]:
    """Score the graph and fold in the cost regularizers."""
    table = score_graph(graph, container, config)
    costs = cost_model.layer_costs(graph, config.spatial_convention)
    reg = cost_model.regularizer(costs, config.beta, config.gamma)
    return cost_model.regularized_importance(table, reg), costs


# ---------------------------------------------------------------------------
# plan construction


@dataclass(frozen=True)
class _Unit:
    score: float
    anchor: int      # first producer's layer index: deterministic tie-break
    channel: int
    group_idx: int
    weight: int      # filters removed network-wide by pruning this channel

    @property
    def sort_key(self):
        # equal scores favor the later channel, so duplicate copies go
        # before the originals they mirror
        return (self.score, self.anchor, -self.channel)


def _group_scores(graph: ModelGraph, group: CouplingGroup, table: ImportanceTable) -> np.ndarray:
    vectors = []
    for consumer, flatten_spatial in _scorers(graph, group):
        vec = table.reimp.get(consumer)
        if vec is None:
            raise PlanError(f"importance table is missing scored layer {consumer!r}")
        if vec.shape[0] != group.width:
            raise PlanError(
                f"scored layer {consumer!r} has {vec.shape[0]} scores, group width {group.width}"
            )
        vectors.append(vec)
    return np.mean(vectors, axis=0)


def build_plan(
    graph: ModelGraph,
    container: weight_store.WeightContainer,
    config: PlanConfig,
) -> PruningPlan:
    """Rank all prunable units and remove the lowest-scored quota.

    The quota is floor(ratio * total prunable filters); under
    group_quota="width" a coupled channel consumes as many quota slots as
    it removes filters.  A removal that would empty an axis is skipped and
    its quota is not handed to the next candidate, so the achieved ratio
    can undershoot the request.
    """
    config.validate()
    table, _costs = regularized_table(graph, container, config)
    groups = coupling_groups(graph)

    units: list[_Unit] = []
    total_weight = 0
    for gi, g in enumerate(groups):
        if not g.prunable:
            continue
        scores = _group_scores(graph, g, table)
        weight = len(g.members) if config.group_quota == "width" else 1
        anchor = graph.index(g.members[0][0])
        for ch in range(g.width):
            units.append(_Unit(
                score=float(scores[ch]), anchor=anchor, channel=ch,
                group_idx=gi, weight=weight,
            ))
        total_weight += g.width * weight

    quota = int(config.ratio * total_weight)
    units.sort(key=lambda u: u.sort_key)

    removed_per_group: dict[int, set[int]] = {}
    used = 0
    removed_weight = 0
    group_width = {gi: g.width for gi, g in enumerate(groups)}
    for u in units:
        if used + u.weight > quota:
            break
        used += u.weight
        taken = removed_per_group.setdefault(u.group_idx, set())
        if len(taken) + 1 >= group_width[u.group_idx]:
            continue  # would empty the axis; quota already consumed
        taken.add(u.channel)
        removed_weight += u.weight

    removals: dict[str, tuple[int, ...]] = {}
    widths: dict[str, int] = {}
    for gi, g in enumerate(groups):
        chans = removed_per_group.get(gi)
        if not chans:
            continue
        for name, _side in g.members:
            removals[name] = tuple(sorted(chans))
            widths[name] = g.width
    # stable key order for byte-identical plan files
    order = {l.name: i for i, l in enumerate(graph.layers)}
    removals = dict(sorted(removals.items(), key=lambda kv: order[kv[0]]))
    widths = dict(sorted(widths.items(), key=lambda kv: order[kv[0]]))

    predicted = cost_model.predict_reduction(graph, removals, config.spatial_convention)
    achieved = removed_weight / total_weight if total_weight else 0.0
    return PruningPlan(
        removals=removals,
        original_widths=widths,
        requested_ratio=config.ratio,
        achieved_ratio=achieved,
        predicted=predicted,
        config=config,
    )


# ---------------------------------------------------------------------------
# plan application


def _validate_plan(graph: ModelGraph, plan: PruningPlan) -> list[CouplingGroup]:
    groups = coupling_groups(graph)
    by_member: dict[str, CouplingGroup] = {}
    for g in groups:
        for name, _side in g.members:
            by_member[name] = g
    for name, idx in plan.removals.items():
        if name not in by_member:
            raise PlanError(f"plan names {name!r}, which is not a prunable axis")
        g = by_member[name]
        if not g.prunable:
            raise PlanError(f"plan prunes unprunable axis {name!r} ({g.blocked_reason})")
        recorded = plan.original_widths.get(name)
        actual = graph.layer(name).out_channels
        if recorded is not None and recorded != actual:
            raise PlanError(
                f"stale plan: {name!r} was {recorded} channels wide when planned, "
                f"graph now has {actual}"
            )
        if any(not 0 <= i < actual for i in idx):
            raise PlanError(f"stale plan: {name!r} removal indices exceed width {actual}")
    touched: list[CouplingGroup] = []
    seen: set[int] = set()
    for g in groups:
        sets = {plan.removals.get(name) for name, _ in g.members}
        if sets == {None}:
            continue
        if None in sets or len(sets) != 1:
            raise PlanError(
                f"coupled axes {[n for n, _ in g.members]} must share one removal set"
            )
        if id(g) not in seen:
            seen.add(id(g))
            touched.append(g)
    return touched


def apply_plan(
    graph: ModelGraph,
    container: weight_store.WeightContainer,
    plan: PruningPlan,
) -> tuple[ModelGraph, weight_store.WeightContainer]:
    """Slice every affected tensor and return the revalidated pair.

    Surviving values are preserved bit-exactly; the recomputed parameter
    total must equal the original minus the plan's prediction.
    """
    weight_store.validate_container(graph, container)
    touched = _validate_plan(graph, plan)
    if not plan.removals:
        return graph, container

    tensors = dict(container.entries)

    def cut(tname: str, axis: int, idx) -> None:
        tensors[tname] = weight_store.slice_tensor(tensors[tname], axis, idx)

    for g in touched:
        idx = plan.removals[g.members[0][0]]
        for name, _side in g.members:
            l = graph.layer(name)
            if l.kind == "fc":
                cut(name, 1, idx)
            elif l.kind == "depthwise_conv":
                cut(name, 2, idx)
            else:
                cut(name, 3, idx)
            if l.bias:
                cut(name + ".bias", 0, idx)
        for bn in g.batch_norms:
            for sfx in (".gamma", ".beta", ".mean", ".var"):
                cut(bn + sfx, 0, idx)
        for name in g.consumers:
            l = graph.layer(name)
            if l.kind == "fc":
                cut(name, 0, idx)
            elif l.kind == "pointwise_conv" or l.kind == "conv":
                cut(name, 2, idx)
        for name, spatial in g.flatten_consumers:
            o2 = spatial * spatial
            rows = [c * o2 + s for c in idx for s in range(o2)]
            cut(name, 0, rows)

    pruned_graph = apply_removals_to_shapes(graph, plan.removals)
    pruned = weight_store.WeightContainer(entries=tensors)
    weight_store.validate_container(pruned_graph, pruned)

    before = cost_model.layer_costs(graph, plan.config.spatial_convention)
    after = cost_model.layer_costs(pruned_graph, plan.config.spatial_convention)
    got = before.total_params - after.total_params
    if got != plan.predicted.param_reduction:
        raise PlanError(
            f"internal bookkeeping mismatch: surgery removed {got} parameters, "
            f"plan predicted {plan.predicted.param_reduction}"
        )
    return pruned_graph, pruned


# ---------------------------------------------------------------------------
# merge-equivalence verification


def merge_equivalence_check(
    w_prev: np.ndarray,
    w: np.ndarray,
    m1: int,
    m2: int,
    alpha: float,
    batch: np.ndarray,
) -> float:
    """Max |Y - Y_merged| over a batch for an activation-free two-layer net.

    The merged network drops hidden unit m2 and redirects its input column
    into m1 scaled by alpha; when row m2 of the second weight matrix is
    exactly alpha times row m1, the two networks compute the same output
    up to float rounding.  All arithmetic runs in float32 to match stored
    checkpoint precision.
    """
    if m1 == m2:
        raise ValueError("m1 and m2 must be distinct hidden units")
    w_prev = np.asarray(w_prev, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    batch = np.asarray(batch, dtype=np.float32)
    if w_prev.ndim != 2 or w.ndim != 2 or w_prev.shape[1] != w.shape[0]:
        raise ValueError(
            f"incompatible shapes {w_prev.shape} x {w.shape} for a two-layer network"
        )
    hidden = w_prev.shape[1]
    if not (0 <= m1 < hidden and 0 <= m2 < hidden):
        raise ValueError(f"hidden unit index out of range for width {hidden}")

    original = (batch @ w_prev) @ w

    merged_prev = w_prev.copy()
    merged_prev[:, m1] += np.float32(alpha) * merged_prev[:, m2]
    merged_prev = np.delete(merged_prev, m2, axis=1)
    merged_w = np.delete(w, m2, axis=0)
    merged = (batch @ merged_prev) @ merged_w

    return float(np.max(np.abs(original - merged)))


# ---------------------------------------------------------------------------
# plan files


def plan_to_text(plan: PruningPlan) -> str:
    doc = {
        "format": PLAN_FORMAT,
        "config": {
            "ratio": plan.config.ratio,
            "detector": plan.config.detector,
            "normalization": plan.config.normalization,
            "k": plan.config.k,
            "beta": plan.config.beta,
            "gamma": plan.config.gamma,
            "spatial_convention": plan.config.spatial_convention,
            "signed_mode": plan.config.signed_mode,
            "group_quota": plan.config.group_quota,
        },
        "original_widths": {k: int(v) for k, v in plan.original_widths.items()},
        "removals": {k: [int(i) for i in v] for k, v in plan.removals.items()},
        "achieved_ratio": float(plan.achieved_ratio),
        "predicted": {
            "param_reduction": int(plan.predicted.param_reduction),
            "flop_reduction": int(plan.predicted.flop_reduction),
            "prr": float(plan.predicted.prr),
            "frr": float(plan.predicted.frr),
        },
    }
    return yaml.safe_dump(doc, sort_keys=False)


def plan_from_text(text: str) -> PruningPlan:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise PlanError(f"plan file is not valid YAML: {e}") from e
    if not isinstance(doc, dict) or doc.get("format") != PLAN_FORMAT:
        raise PlanError(f"not a {PLAN_FORMAT} document")
    try:
        cfg = PlanConfig(**doc["config"])
        removals = {k: tuple(int(i) for i in v) for k, v in doc["removals"].items()}
        widths = {k: int(v) for k, v in doc.get("original_widths", {}).items()}
        predicted = cost_model.Reduction(
            param_reduction=int(doc["predicted"]["param_reduction"]),
            flop_reduction=int(doc["predicted"]["flop_reduction"]),
            prr=float(doc["predicted"]["prr"]),
            frr=float(doc["predicted"]["frr"]),
        )
        return PruningPlan(
            removals=removals,
            original_widths=widths,
            requested_ratio=float(cfg.ratio),
            achieved_ratio=float(doc["achieved_ratio"]),
            predicted=predicted,
            config=cfg,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise PlanError(f"malformed plan file: {e}") from e
