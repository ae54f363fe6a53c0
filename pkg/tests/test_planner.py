import numpy as np
import pytest

from prunekit import cost_model, fixtures
from prunekit.errors import PlanError
from prunekit.model_graph import coupling_groups
from prunekit.planner import (
    PlanConfig,
    PruningPlan,
    apply_plan,
    build_plan,
    merge_equivalence_check,
    plan_from_text,
    plan_to_text,
    score_graph,
)

from conftest import (
    conv,
    fc,
    parse,
    random_graph,
    random_weights_for,
    with_tensor,
)
from oracles import (
    container_param_count,
    flatten_rows_oracle,
    importance_oracle,
    two_layer_forward,
)


def manual_plan(graph, removals, config=None):
    config = config or PlanConfig()
    removals = {k: tuple(sorted(v)) for k, v in removals.items()}
    widths = {k: graph.layer(k).out_channels for k in removals}
    return PruningPlan(
        removals=removals,
        original_widths=widths,
        requested_ratio=0.0,
        achieved_ratio=0.0,
        predicted=cost_model.predict_reduction(graph, removals, config.spatial_convention),
        config=config,
    )


def full_group_removals(graph, group, indices):
    return {name: tuple(sorted(indices)) for name, _ in group.members}


class TestBuildPlan:
    def test_ratio_zero_empty_plan(self):
        g = parse(8, 3, [conv("a", 3, 6), conv("out", 6, 4)])
        w = random_weights_for(g, seed=1)
        plan = build_plan(g, w, PlanConfig(ratio=0.0))
        assert plan.removals == {}
        assert plan.predicted.param_reduction == 0
        assert plan.achieved_ratio == 0.0

    def test_duplicate_slice_tie_breaks_to_higher_index(self):
        g = parse(8, 3, [conv("feat", 3, 4), conv("head", 4, 5)])
        w = random_weights_for(g, seed=2)
        head = np.array(w["head"].data, dtype=np.float64)
        head[:, :, 3, :] = head[:, :, 1, :]  # slice 3 duplicates slice 1
        w = with_tensor(w, "head", head)
        plan = build_plan(g, w, PlanConfig(ratio=0.25, k=1))
        assert plan.removals == {"feat": (3,)}
        # cross-check the ranking against the brute-force scoring oracle
        scores = importance_oracle(head, k=1)
        dupes = sorted(np.flatnonzero(np.isclose(scores, 0.0)))
        assert dupes == [1, 3]

    def test_bigger_layer_wins_under_gamma(self):
        g = parse(1, 5, [fc("fcP", 5, 6), fc("fcA", 6, 120), fc("fcB", 120, 8)])
        w = random_weights_for(g, seed=3)
        a = np.array(w["fcA"].data, dtype=np.float64)
        a[4] = a[2]  # duplicate pair scored by the big layer
        b = np.array(w["fcB"].data, dtype=np.float64)
        b[50] = b[10]  # duplicate pair scored by the small layer
        w = with_tensor(with_tensor(g and w, "fcA", a), "fcB", b)
        total_units = 6 + 120
        plan = build_plan(g, w, PlanConfig(ratio=1.0 / total_units, k=1, gamma=5.0))
        assert plan.removals == {"fcP": (4,)}

    def test_redundant_duplicates_removed_first(self):
        g = parse(8, 3, [conv("feat", 3, 10), conv("head", 10, 6)])
        w = random_weights_for(g, seed=4)
        head = np.array(w["head"].data, dtype=np.float64)
        head[:, :, 8, :] = head[:, :, 0, :]
        head[:, :, 9, :] = head[:, :, 1, :]
        w = with_tensor(w, "head", head)
        plan = build_plan(g, w, PlanConfig(ratio=0.2, k=1))
        assert plan.removals == {"feat": (8, 9)}

    def test_monotone_removals_in_ratio(self):
        g = fixtures.fixture_graph("mobilenet_cifar")
        w = fixtures.synthesize_weights(g, seed=5)
        previous: dict[str, set] = {}
        for ratio in (0.1, 0.2, 0.35, 0.5):
            plan = build_plan(g, w, PlanConfig(ratio=ratio))
            current = {k: set(v) for k, v in plan.removals.items()}
            for name, idx in previous.items():
                assert idx <= current.get(name, set()), (ratio, name)
            previous = current

    def test_coupling_groups_share_index_sets(self):
        g = fixtures.fixture_graph("resnet32_cifar")
        w = fixtures.synthesize_weights(g, seed=6)
        plan = build_plan(g, w, PlanConfig(ratio=0.4))
        for group in coupling_groups(g):
            sets = {plan.removals.get(name) for name, _ in group.members}
            assert len(sets) == 1  # either all absent or all identical

    def test_survivor_guarantee_at_high_ratio(self):
        g = parse(8, 3, [conv("a", 3, 3), conv("b", 3, 3), conv("out", 3, 2)])
        w = random_weights_for(g, seed=7)
        plan = build_plan(g, w, PlanConfig(ratio=0.99))
        g2, _ = apply_plan(g, w, plan)
        assert all(l.out_channels >= 1 for l in g2.layers)
        assert g2.output_layer().out_channels == 2

    def test_achieved_ratio_reported_on_undershoot(self):
        g = parse(8, 3, [conv("a", 3, 2), conv("out", 2, 2)])
        w = random_weights_for(g, seed=8)
        plan = build_plan(g, w, PlanConfig(ratio=0.9))
        # only axis has width 2: one removal possible out of quota 1
        assert plan.achieved_ratio <= 0.9

    def test_determinism_across_workers_and_runs(self):
        g = fixtures.fixture_graph("resnet32_cifar")
        w = fixtures.synthesize_weights(g, seed=9)
        texts = {
            plan_to_text(build_plan(g, w, PlanConfig(ratio=0.3, workers=n)))
            for n in (1, 4, 4, 1)
        }
        assert len(texts) == 1

    def test_ratio_one_rejected(self):
        g = parse(8, 3, [conv("a", 3, 6), conv("out", 6, 4)])
        w = random_weights_for(g, seed=30)
        from prunekit.errors import ConfigError
        with pytest.raises(ConfigError, match="ratio"):
            build_plan(g, w, PlanConfig(ratio=1.0))

    def test_weight_graph_mismatch_rejected(self):
        g = parse(8, 3, [conv("a", 3, 6), conv("out", 6, 4)])
        other = parse(8, 3, [conv("a", 3, 7), conv("out", 7, 4)])
        w = random_weights_for(other, seed=31)
        from prunekit.errors import ContainerError
        with pytest.raises(ContainerError):
            build_plan(g, w, PlanConfig(ratio=0.2))

    def test_depthwise_scored_from_pointwise_only(self):
        g = fixtures.fixture_graph("mobilenet_cifar")
        w = fixtures.synthesize_weights(g, seed=10)
        table = score_graph(g, w, PlanConfig())
        assert "pw1" in table.scores
        assert "dw1" not in table.scores
        assert "bn_dw1" not in table.scores


class TestApplyPlan:
    def test_empty_plan_is_identity(self):
        g = parse(8, 3, [conv("a", 3, 6), conv("out", 6, 4)])
        w = random_weights_for(g, seed=11)
        plan = manual_plan(g, {})
        g2, w2 = apply_plan(g, w, plan)
        assert g2 == g
        assert all(np.array_equal(w2[t.name].data, t.data) for t in w)

    def test_single_filter_surgery_shapes_and_bits(self):
        g = parse(8, 2, [conv("a", 2, 3), conv("b", 3, 4), conv("out", 4, 2)])
        w = random_weights_for(g, seed=12)
        plan = manual_plan(g, {"a": (1,)})
        g2, w2 = apply_plan(g, w, plan)
        assert w2["a"].dims == (3, 3, 2, 2)
        assert w2["b"].dims == (3, 3, 2, 4)
        keep = [0, 2]
        assert w2["a"].data.tobytes() == w["a"].data[:, :, :, keep].tobytes()
        assert w2["b"].data.tobytes() == w["b"].data[:, :, keep, :].tobytes()
        assert g2.layer("a").out_channels == 2
        assert g2.layer("b").in_channels == 2

    def test_flatten_edge_expands_channel_rows(self):
        g = parse(2, 2, [conv("a", 2, 2, kernel=1), fc("head", 2 * 2 * 2, 3)])
        assert g.layer("a").out_spatial == 2
        w = random_weights_for(g, seed=13)
        plan = manual_plan(g, {"a": (0,)})
        g2, w2 = apply_plan(g, w, plan)
        rows = flatten_rows_oracle(channels=2, spatial=2)
        assert rows[0] == [0, 1, 2, 3]
        kept = rows[1]
        assert w2["head"].dims == (4, 3)
        assert np.array_equal(w2["head"].data, w["head"].data[kept])
        assert g2.layer("head").in_channels == 4

    def test_bias_and_batch_norm_sliced_in_lockstep(self):
        from conftest import manifest_text
        from prunekit.model_graph import parse_manifest
        layers = [
            conv("a", 3, 5, bias=True, successors=["bn_a"]),
            {"name": "bn_a", "kind": "batch_norm", "in_channels": 5,
             "out_channels": 5, "successors": ["out"]},
            conv("out", 5, 2, successors=[]),
        ]
        g = parse_manifest(manifest_text(8, 3, layers))
        w = random_weights_for(g, seed=14)
        plan = manual_plan(g, {"a": (0, 3)})
        g2, w2 = apply_plan(g, w, plan)
        keep = [1, 2, 4]
        assert np.array_equal(w2["a.bias"].data, w["a.bias"].data[keep])
        for sfx in (".gamma", ".beta", ".mean", ".var"):
            assert np.array_equal(w2["bn_a" + sfx].data, w["bn_a" + sfx].data[keep])
        assert g2.layer("bn_a").out_channels == 3

    def test_depthwise_lockstep(self):
        g = fixtures.fixture_graph("mobilenet_cifar")
        w = fixtures.synthesize_weights(g, seed=15)
        group = next(gr for gr in coupling_groups(g)
                     if ("pw1", "output") in gr.members)
        plan = manual_plan(g, full_group_removals(g, group, (3, 40)))
        g2, w2 = apply_plan(g, w, plan)
        assert w2["pw1"].dims == (1, 1, 32, 62)
        assert w2["dw2"].dims == (3, 3, 62)
        assert w2["pw2"].dims == (1, 1, 62, 128)
        assert g2.layer("dw2").in_channels == g2.layer("dw2").out_channels == 62

    def test_residual_group_slices_every_member(self):
        g = fixtures.fixture_graph("resnet32_cifar")
        w = fixtures.synthesize_weights(g, seed=16)
        group = next(gr for gr in coupling_groups(g) if gr.width == 16)
        plan = manual_plan(g, full_group_removals(g, group, (2, 7, 11)))
        g2, w2 = apply_plan(g, w, plan)
        assert w2["conv1"].dims == (3, 3, 3, 13)
        # block outputs lose filters; block inputs lose rows; inner axes stay 16
        assert w2["conv1_3b"].dims == (3, 3, 16, 13)
        assert w2["conv1_3a"].dims == (3, 3, 13, 16)
        assert w2["conv2_1a"].dims == (3, 3, 13, 32)
        assert g2.layer("bn1_5b").out_channels == 13
        for sfx in (".gamma", ".beta", ".mean", ".var"):
            assert w2["bn1_2b" + sfx].dims == (13,)

    def test_mismatched_group_sets_rejected(self):
        g = fixtures.fixture_graph("resnet32_cifar")
        w = fixtures.synthesize_weights(g, seed=17)
        group = next(gr for gr in coupling_groups(g) if gr.width == 16)
        removals = full_group_removals(g, group, (2,))
        removals["conv1_1b"] = (3,)
        with pytest.raises(PlanError, match="share"):
            apply_plan(g, w, manual_plan(g, {k: v for k, v in removals.items()}))

    def test_unknown_layer_rejected(self):
        g = parse(8, 3, [conv("a", 3, 6), conv("out", 6, 4)])
        w = random_weights_for(g, seed=18)
        with pytest.raises((PlanError, Exception)):
            apply_plan(g, w, manual_plan(g, {"ghost": (0,)}))

    def test_stale_plan_rejected_on_second_application(self):
        g = parse(8, 3, [conv("a", 3, 6), conv("b", 6, 5), conv("out", 5, 4)])
        w = random_weights_for(g, seed=19)
        plan = manual_plan(g, {"a": (0,)})
        g2, w2 = apply_plan(g, w, plan)
        with pytest.raises(PlanError, match="stale"):
            apply_plan(g2, w2, plan)

    def test_bookkeeping_on_random_plans(self):
        rng = np.random.default_rng(20)
        for trial in range(40):
            g = random_graph(rng)
            w = random_weights_for(g, seed=trial)
            removals = {}
            for group in coupling_groups(g):
                if not group.prunable or rng.random() < 0.3:
                    continue
                n = int(rng.integers(1, group.width))
                idx = rng.choice(group.width, size=n, replace=False)
                removals.update(full_group_removals(g, group, idx.tolist()))
            plan = manual_plan(g, removals)
            g2, w2 = apply_plan(g, w, plan)
            shrunk = container_param_count(w) - container_param_count(w2)
            assert shrunk == plan.predicted.param_reduction
            before = cost_model.layer_costs(g)
            after = cost_model.layer_costs(g2)
            assert before.total_params - after.total_params == plan.predicted.param_reduction
            assert before.total_flops - after.total_flops == plan.predicted.flop_reduction


class TestMergeEquivalence:
    def test_exact_scaled_dependence(self):
        rng = np.random.default_rng(21)
        w_prev = rng.standard_normal((6, 5)).astype(np.float32)
        w = rng.standard_normal((5, 4)).astype(np.float32)
        w[3] = 2.0 * w[1]
        batch = rng.standard_normal((32, 6)).astype(np.float32)
        dev = merge_equivalence_check(w_prev, w, m1=1, m2=3, alpha=2.0, batch=batch)
        scale = float(np.max(np.abs((batch @ w_prev) @ w)))
        assert dev <= 1e-5 * max(scale, 1.0)

    def test_negative_alpha(self):
        rng = np.random.default_rng(22)
        w_prev = rng.standard_normal((4, 6)).astype(np.float32)
        w = rng.standard_normal((6, 3)).astype(np.float32)
        w[5] = -w[0]
        batch = rng.standard_normal((16, 4)).astype(np.float32)
        dev = merge_equivalence_check(w_prev, w, m1=0, m2=5, alpha=-1.0, batch=batch)
        scale = float(np.max(np.abs((batch @ w_prev) @ w)))
        assert dev <= 1e-5 * max(scale, 1.0)

    def test_residual_bounded_by_l1_of_defect(self):
        rng = np.random.default_rng(23)
        for trial in range(10):
            w_prev = rng.standard_normal((5, 7)).astype(np.float32)
            w = rng.standard_normal((7, 6)).astype(np.float32)
            alpha = float(rng.uniform(-2, 2))
            delta = 0.01 * rng.standard_normal(6).astype(np.float32)
            w[4] = alpha * w[2] + delta
            batch = rng.standard_normal((64, 5)).astype(np.float32)
            dev = merge_equivalence_check(w_prev, w, m1=2, m2=4, alpha=alpha, batch=batch)
            hidden = batch.astype(np.float64) @ w_prev.astype(np.float64)
            bound = np.sum(np.abs(delta)) * np.max(np.abs(hidden[:, 4]))
            assert dev <= bound + 1e-4
            # agree with the loop-based forward difference
            merged_prev = w_prev.astype(np.float64).copy()
            merged_prev[:, 2] += alpha * merged_prev[:, 4]
            merged_prev = np.delete(merged_prev, 4, axis=1)
            merged_w = np.delete(w.astype(np.float64), 4, axis=0)
            want = np.max(np.abs(
                two_layer_forward(w_prev.astype(np.float64), w.astype(np.float64), batch)
                - two_layer_forward(merged_prev, merged_w, batch)))
            assert dev == pytest.approx(want, rel=1e-3, abs=1e-4)

    def test_same_index_rejected(self):
        with pytest.raises(ValueError):
            merge_equivalence_check(np.ones((2, 3)), np.ones((3, 2)), 1, 1, 1.0,
                                    np.ones((4, 2)))


class TestPlanFiles:
    def test_round_trip(self):
        g = fixtures.fixture_graph("vgg16_cifar")
        w = fixtures.synthesize_weights(g, seed=24)
        plan = build_plan(g, w, PlanConfig(ratio=0.2, beta=1.0, gamma=0.5))
        again = plan_from_text(plan_to_text(plan))
        assert again.removals == plan.removals
        assert again.config == plan.config
        assert plan_to_text(again) == plan_to_text(plan)

    def test_rejects_garbage(self):
        with pytest.raises(PlanError):
            plan_from_text("format: something-else\n")
