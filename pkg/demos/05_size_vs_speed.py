#!/usr/bin/env python3
"""Steering the same ratio toward a smaller or a faster model.

The two regularizer weights bias the global ranking: beta discounts
layers whose pruning saves computation, gamma discounts layers whose
pruning saves parameters.  Sweeping them at a fixed ratio trades Prr
(parameter reduction) against Frr (FLOP reduction)."""

from prunekit import fixtures
from prunekit.planner import PlanConfig, build_plan

graph = fixtures.fixture_graph("vgg16_cifar")
weights = fixtures.synthesize_weights(graph, seed=11)

print(f"{'beta':>5} {'gamma':>6} {'Prr':>8} {'Frr':>8}")
for beta, gamma in ((0.0, 0.0), (3.0, 0.0), (1.0, 1.0), (0.0, 3.0)):
    plan = build_plan(graph, weights,
                      PlanConfig(ratio=0.35, beta=beta, gamma=gamma))
    print(f"{beta:>5.1f} {gamma:>6.1f} {plan.predicted.prr:>8.4f} "
          f"{plan.predicted.frr:>8.4f}")

print()
print("larger gamma removes more parameters; larger beta removes more FLOPs.")
