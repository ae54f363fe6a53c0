#!/usr/bin/env python3
"""Axes that must be pruned together.

Identity skip connections force every block in a residual stage to share
one channel space: remove channel 7 anywhere and it must disappear
everywhere, or the elementwise adds stop type-checking.  Depthwise
convolutions likewise mirror their producer's channels.  The planner
scores such a group by the mean importance over all its consumers and
emits identical index sets for every member."""

from prunekit import fixtures
from prunekit.model_graph import coupling_groups
from prunekit.planner import PlanConfig, apply_plan, build_plan

graph = fixtures.fixture_graph("resnet32_cifar")

print("coupled axes in ResNet-32 (CIFAR):")
for group in coupling_groups(graph):
    if len(group.members) > 1:
        names = [m for m, _ in group.members]
        print(f"  width {group.width:>3}: {names[0]} .. {names[-1]} "
              f"({len(names)} output axes, {len(group.consumers)} consumers)")

weights = fixtures.synthesize_weights(graph, seed=3)
plan = build_plan(graph, weights, PlanConfig(ratio=0.35))

stage1 = [m for m, _ in next(g for g in coupling_groups(graph) if g.width == 16).members]
sets = {name: plan.removals.get(name, ()) for name in stage1}
print()
print("stage-1 removal sets (must be identical):")
for name, idx in sets.items():
    print(f"  {name}: {list(idx)}")
assert len({tuple(v) for v in sets.values()}) == 1

pruned_graph, _ = apply_plan(graph, weights, plan)
width = pruned_graph.layer("conv1").out_channels
print()
print(f"after surgery every stage-1 member is {width} channels wide:")
print("  " + ", ".join(f"{n}={pruned_graph.layer(n).out_channels}" for n in stage1))
