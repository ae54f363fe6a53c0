"""Command-line front end: inspect, importance, plan, apply, report.

Exit codes: 0 success, 1 usage error, 2 data or validation error.  Every
command is deterministic given its inputs; the effective configuration is
echoed into each artifact.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import cost_model, fixtures, planner, weight_store
from .errors import PruneKitError
from .model_graph import ModelGraph, coupling_groups, parse_manifest, serialize_manifest
from .planner import PlanConfig


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are exit 1
        raise _UsageError(message)


def _config_flags(p: argparse.ArgumentParser, with_ratio: bool) -> None:
    if with_ratio:
        p.add_argument("--ratio", type=float, required=True,
                       help="global fraction of prunable filters to remove, in [0, 1)")
    p.add_argument("--k", type=int, default=3, help="similarities averaged per filter")
    p.add_argument("--detector", default="correlation",
                   choices=("correlation", "cosine", "dot_product"))
    p.add_argument("--normalization", default="max", choices=("max", "l1", "l2"))
    p.add_argument("--beta", type=float, default=0.0,
                   help="computational-cost regularizer weight")
    p.add_argument("--gamma", type=float, default=0.0,
                   help="parameter-quantity regularizer weight")
    p.add_argument("--spatial-convention", default="output", choices=("output", "input"))
    p.add_argument("--signed-mode", default="abs", choices=("abs", "relu", "square"))
    p.add_argument("--group-quota", default="width", choices=("width", "unit"))
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="prunekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="per-layer parameter/FLOP cost report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--spatial-convention", default="output", choices=("output", "input"))
    p.add_argument("--out")

    p = sub.add_parser("importance", help="per-filter importance dump")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", help="COPW container (omit to synthesize from --seed)")
    p.add_argument("--seed", type=int, default=0)
    _config_flags(p, with_ratio=False)
    p.add_argument("--out")

    p = sub.add_parser("plan", help="build a pruning plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", help="COPW container (omit to synthesize from --seed)")
    p.add_argument("--seed", type=int, default=0)
    _config_flags(p, with_ratio=True)
    p.add_argument("--out", help="plan file path (omit to print the plan)")

    p = sub.add_parser("apply", help="apply a plan to manifest + weights")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", help="COPW container (omit to synthesize from --seed)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--plan", required=True)
    p.add_argument("--out", required=True,
                   help="output prefix; writes <out>.yaml and <out>.copw")

    p = sub.add_parser("report", help="summarize an existing plan file")
    p.add_argument("--plan", required=True)
    return parser


def _load_manifest(ref: str) -> ModelGraph:
    if os.path.exists(ref):
        with open(ref, "r", encoding="utf-8") as f:
            return parse_manifest(f.read())
    if ref in fixtures.fixture_names():
        return fixtures.fixture_graph(ref)
    raise PruneKitError(
        f"manifest {ref!r} is neither a file nor a shipped fixture "
        f"({', '.join(fixtures.fixture_names())})"
    )


def _load_weights(args, graph: ModelGraph) -> weight_store.WeightContainer:
    if args.weights:
        with open(args.weights, "rb") as f:
            c = weight_store.read_container(f.read())
        weight_store.validate_container(graph, c)
        return c
    return fixtures.synthesize_weights(graph, seed=args.seed)


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def _plan_config(args, ratio: float = 0.0) -> PlanConfig:
    return PlanConfig(
        ratio=ratio,
        detector=args.detector,
        normalization=args.normalization,
        k=args.k,
        beta=args.beta,
        gamma=args.gamma,
        spatial_convention=args.spatial_convention,
        signed_mode=args.signed_mode,
        group_quota=args.group_quota,
        workers=args.workers,
    )


def cmd_inspect(args) -> int:
    graph = _load_manifest(args.manifest)
    costs = cost_model.layer_costs(graph, args.spatial_convention)
    reg = cost_model.regularizer(costs, args.beta, args.gamma)
    lines = [f"{'layer':<12} {'kind':<15} {'params':>12} {'flops':>16} "
             f"{'S':>12} {'C':>16} {'dS/filter':>10} {'dC/filter':>12} {'Reg':>8}"]
    for l in graph.layers:
        row = costs.layers.get(l.name)
        if row is None:
            lines.append(f"{l.name:<12} {l.kind:<15} {cost_model.own_params(l):>12} "
                         f"{0:>16} {'-':>12} {'-':>16} {'-':>10} {'-':>12} {'-':>8}")
            continue
        lines.append(
            f"{l.name:<12} {l.kind:<15} {row.params:>12} {row.flops:>16} "
            f"{row.size_cost:>12} {row.compute_cost:>16} "
            f"{row.delta_params_per_filter:>10} {row.delta_flops_per_filter:>12} "
            f"{reg.values[l.name]:>8.4f}"
        )
    lines.append(f"{'total':<12} {'':<15} {costs.total_params:>12} {costs.total_flops:>16}")
    coupled = [g for g in coupling_groups(graph) if len(g.members) > 1]
    if coupled:
        lines.append("")
        lines.append("coupled axes (pruned with identical index sets):")
        for g in coupled:
            names = ", ".join(n for n, _ in g.members)
            lines.append(f"  [{g.width} ch] {names}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_importance(args) -> int:
    graph = _load_manifest(args.manifest)
    weights = _load_weights(args, graph)
    config = _plan_config(args)
    table, _ = planner.regularized_table(graph, weights, config)
    lines = ["layer\tfilter\tsimilarity_top1\timportance\tregularizer\treimportance"]
    for name, scores in table.scores.items():
        reg = table.reg[name]
        reimp = table.reimp[name]
        top1 = table.top1[name]
        for i in range(scores.shape[0]):
            lines.append(
                f"{name}\t{i}\t{top1[i]:.6f}\t{scores[i]:.6f}\t{reg:.6f}\t{reimp[i]:.6f}"
            )
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_plan(args) -> int:
    graph = _load_manifest(args.manifest)
    weights = _load_weights(args, graph)
    config = _plan_config(args, ratio=args.ratio)
    plan = planner.build_plan(graph, weights, config)
    text = planner.plan_to_text(plan)
    if args.out:
        _emit(text, args.out)
        removed = sum(len(v) for v in plan.removals.values())
        print(f"plan written to {args.out}")
        print(f"achieved ratio {plan.achieved_ratio:.4f} (requested {args.ratio:.4f})")
        print(f"removals across {len(plan.removals)} axes, {removed} index entries")
        print(f"predicted: -{plan.predicted.param_reduction} params "
              f"(Prr {plan.predicted.prr:.4f}), -{plan.predicted.flop_reduction} FLOPs "
              f"(Frr {plan.predicted.frr:.4f})")
    else:
        sys.stdout.write(text)
    return 0


def cmd_apply(args) -> int:
    graph = _load_manifest(args.manifest)
    weights = _load_weights(args, graph)
    with open(args.plan, "r", encoding="utf-8") as f:
        plan = planner.plan_from_text(f.read())
    pruned_graph, pruned_weights = planner.apply_plan(graph, weights, plan)
    manifest_path = args.out + ".yaml"
    weights_path = args.out + ".copw"
    with open(manifest_path, "w", encoding="utf-8") as f:
        f.write(serialize_manifest(pruned_graph))
    with open(weights_path, "wb") as f:
        f.write(weight_store.write_container(pruned_weights))
    after = cost_model.layer_costs(pruned_graph, plan.config.spatial_convention)
    print(f"pruned manifest written to {manifest_path}")
    print(f"pruned weights written to {weights_path}")
    print(f"remaining: {after.total_params} params, {after.total_flops} FLOPs")
    return 0


def cmd_report(args) -> int:
    with open(args.plan, "r", encoding="utf-8") as f:
        plan = planner.plan_from_text(f.read())
    c = plan.config
    print(f"plan: ratio {plan.requested_ratio} achieved {plan.achieved_ratio:.4f}")
    print(f"config: detector={c.detector} normalization={c.normalization} k={c.k} "
          f"beta={c.beta} gamma={c.gamma} spatial={c.spatial_convention} "
          f"signed={c.signed_mode} quota={c.group_quota}")
    print(f"predicted: -{plan.predicted.param_reduction} params (Prr {plan.predicted.prr:.4f}), "
          f"-{plan.predicted.flop_reduction} FLOPs (Frr {plan.predicted.frr:.4f})")
    for name, idx in plan.removals.items():
        print(f"  {name}: remove {len(idx)} of {plan.original_widths.get(name, '?')} -> {list(idx)}")
    return 0


_COMMANDS = {
    "inspect": cmd_inspect,
    "importance": cmd_importance,
    "plan": cmd_plan,
    "apply": cmd_apply,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except PruneKitError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
