#!/usr/bin/env python3
"""Why position matters: equal parameter savings, unequal FLOP savings.

Removing one filter from a deep VGG16 layer and two filters from an
earlier, spatially larger layer deletes the same number of weights but
four times the computation.  The planner's cost model makes that
difference exact."""

from prunekit import fixtures, cost_model

graph = fixtures.fixture_graph("vgg16_imagenet")
costs = cost_model.layer_costs(graph)

print("per-filter pruning deltas on VGG16 (224x224 input):")
print(f"{'layer':<10} {'out':>5} {'spatial':>8} {'dParams':>9} {'dFLOPs':>12}")
for name in ("conv3_2", "conv4_2", "conv5_2", "fc6"):
    row = costs.layers[name]
    layer = graph.layer(name)
    print(f"{name:<10} {layer.out_channels:>5} {layer.out_spatial:>8} "
          f"{row.delta_params_per_filter:>9} {row.delta_flops_per_filter:>12}")

plan_a = cost_model.predict_reduction(graph, {"conv4_2": (0,)})
plan_b = cost_model.predict_reduction(graph, {"conv3_2": (0, 1)})

print()
print(f"plan a: 1 filter from conv4_2  -> -{plan_a.param_reduction} params, "
      f"-{plan_a.flop_reduction / 1e6:.1f}M FLOPs")
print(f"plan b: 2 filters from conv3_2 -> -{plan_b.param_reduction} params, "
      f"-{plan_b.flop_reduction / 1e6:.1f}M FLOPs")
print(f"same parameters, {plan_b.flop_reduction // plan_a.flop_reduction}x the "
      f"computation saved")
