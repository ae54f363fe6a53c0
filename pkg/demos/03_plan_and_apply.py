#!/usr/bin/env python3
"""End to end: score, rank globally, prune, and verify the accounting.

The plan predicts its savings from shape arithmetic; applying it slices
the actual tensors.  The two must agree to the last parameter, which is
checked here by counting raw float elements in the containers."""

from prunekit import fixtures, cost_model
from prunekit.planner import PlanConfig, apply_plan, build_plan

graph = fixtures.fixture_graph("vgg16_cifar")
weights = fixtures.synthesize_weights(graph, seed=1)

config = PlanConfig(ratio=0.4, k=3, detector="correlation", normalization="max")
plan = build_plan(graph, weights, config)

print(f"requested ratio 0.4, achieved {plan.achieved_ratio:.4f}")
print(f"predicted: -{plan.predicted.param_reduction} params "
      f"(Prr {plan.predicted.prr:.3f}), -{plan.predicted.flop_reduction} FLOPs "
      f"(Frr {plan.predicted.frr:.3f})")
print()
print("removals per layer:")
for name, idx in plan.removals.items():
    print(f"  {name}: {len(idx)} of {plan.original_widths[name]}")

pruned_graph, pruned_weights = apply_plan(graph, weights, plan)

n_before = sum(t.data.size for t in weights)
n_after = sum(t.data.size for t in pruned_weights)
after = cost_model.layer_costs(pruned_graph)

print()
print(f"float elements: {n_before} -> {n_after} (removed {n_before - n_after})")
print(f"prediction matched exactly: {n_before - n_after == plan.predicted.param_reduction}")
print(f"pruned network: {after.total_params} params, {after.total_flops} FLOPs")
