import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgepart.cluster import Cluster, EdgeNode, NodeStatus, Processor, ProcessorKind, default_cluster
from edgepart.cost import BlockAssignment, LayerCosts, Mode, RateContext, Target, model_plan_latency
from edgepart.dnn import TensorShape, bundled_models, chain
from edgepart.errors import NoTargetError, SizeError
from edgepart.harness import Strategy, plan_strategy
from edgepart.partitioner import (LocalPlanner, best_data_partition, brute_force_partition,
                                  dp_model_partition, hierarchical_partition, local_cost_table,
                                  select_mode, single_processor_plan, work_units)

from instances import random_cluster, random_context, random_costs, random_model


def three_layer():
    return LayerCosts.from_arrays([100, 50, 50], [10, 10, 1])


def ordered(*targets, home=None):
    ts = sorted(targets, key=lambda t: -t.rate / t.link)
    return RateContext(tuple(ts), home)


class TestModelDP:
    def test_hand_instance_stays_on_leader(self):
        ctx = ordered(Target(0, 100.0, 1e9), Target(1, 50.0, 10.0), home=0)
        plan = dp_model_partition(three_layer(), ctx)
        assert plan.model_blocks == (BlockAssignment(0, 3, 0),)
        assert plan.predicted_latency == 2.0

    def test_single_target(self):
        ctx = RateContext((Target(5, 3.0, 1.0),), None)
        plan = dp_model_partition(three_layer(), ctx)
        assert plan.model_blocks == (BlockAssignment(0, 3, 5),)

    def test_fast_free_remote_takes_the_tail(self):
        ctx = RateContext((Target(1, 1e12, 1e15), Target(0, 1.0, 1.0)), home=0)
        plan = dp_model_partition(three_layer(), ctx)
        assert plan.model_blocks[-1].target == 1 and plan.model_blocks[-1].stop == 3
        assert plan.predicted_latency < 1e-9

    def test_no_target(self):
        with pytest.raises(NoTargetError):
            dp_model_partition(three_layer(), RateContext(()))

    def test_predicted_latency_matches_cost_model(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            costs = random_costs(rng, int(rng.integers(1, 15)))
            ctx = random_context(rng, int(rng.integers(1, 6)), with_home=bool(rng.integers(2)))
            plan = dp_model_partition(costs, ctx)
            assert plan.predicted_latency == model_plan_latency(plan.model_blocks, costs, ctx)

    def test_targets_follow_context_order(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            ctx = random_context(rng, 4)
            plan = dp_model_partition(random_costs(rng, 10), ctx)
            pos = [ctx.ids.index(t) for t in plan.targets]
            assert pos == sorted(set(pos))

    @settings(max_examples=150, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 7), m=st.integers(1, 4))
    def test_matches_exhaustive_search(self, seed, n, m):
        rng = np.random.default_rng(seed)
        costs, ctx = random_costs(rng, n), random_context(rng, m, with_home=bool(seed % 2))
        dp = dp_model_partition(costs, ctx).predicted_latency
        bf = brute_force_partition(costs, ctx, Mode.MODEL).predicted_latency
        assert abs(dp - bf) <= 1e-9 * bf


class TestDataSearch:
    def test_proportional_two_targets(self):
        costs = LayerCosts.from_arrays([100], [0])
        ctx = RateContext((Target(0, 10.0, 1.0), Target(1, 40.0, 1.0)), home=0)
        plan = best_data_partition(costs, ctx)
        assert plan.data_split.sigma == 2 and plan.data_split.shares == (0.2, 0.8)
        assert plan.predicted_latency == pytest.approx(2.0)

    def test_halo_forces_single_partition(self):
        costs = LayerCosts.from_arrays([100, 100], [1, 1], halo=[1e6, 0])
        ctx = RateContext((Target(0, 10.0, 1e-3), Target(1, 40.0, 1e-3)), home=None)
        plan = best_data_partition(costs, ctx)
        assert plan.data_split.targets == (1,)

    def test_identical_targets_use_all(self):
        costs = LayerCosts.from_arrays([100], [0])
        ctx = RateContext(tuple(Target(i, 5.0, 1.0) for i in range(4)), home=None)
        plan = best_data_partition(costs, ctx)
        assert plan.data_split.shares == (0.25,) * 4

    @settings(max_examples=100, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 4))
    def test_never_beats_exhaustive_data_search(self, seed, m):
        rng = np.random.default_rng(seed)
        costs, ctx = random_costs(rng, 5), random_context(rng, m)
        ours = best_data_partition(costs, ctx).predicted_latency
        bf = brute_force_partition(costs, ctx, Mode.DATA).predicted_latency
        assert bf <= ours * (1 + 1e-12)


class TestSelectMode:
    def test_picks_faster(self):
        costs = LayerCosts.from_arrays([100], [0])
        ctx = RateContext((Target(0, 10.0, 1.0), Target(1, 40.0, 1.0)), home=0)
        assert select_mode(costs, ctx).mode is Mode.DATA

    def test_single_target_tie_goes_to_data(self):
        ctx = RateContext((Target(0, 7.0, 3.0),), home=0)
        plan = select_mode(three_layer(), ctx)
        assert plan.mode is Mode.DATA
        assert plan.predicted_latency == dp_model_partition(three_layer(), ctx).predicted_latency

    def test_model_when_data_is_worse(self):
        # huge input, tiny intermediate: shipping the input in shares costs more than one cut.
        # The leader's own link is never used, a small value just ranks it first.
        costs = LayerCosts.from_arrays([1.0, 1e6], [1.0, 1.0], in_bytes=1e6)
        ctx = ordered(Target(1, 1e6, 1.0), Target(0, 1.0, 1e-9), home=0)
        assert select_mode(costs, ctx).mode is Mode.MODEL


class TestBruteForceGuards:
    def test_too_many_layers(self):
        with pytest.raises(SizeError):
            brute_force_partition(LayerCosts.from_arrays([1] * 13, [1] * 13),
                                  RateContext((Target(0, 1, 1),)), Mode.MODEL)

    def test_too_many_targets(self):
        with pytest.raises(SizeError):
            brute_force_partition(three_layer(), RateContext(tuple(Target(i, 1, 1) for i in range(5))),
                                  Mode.MODEL)

    def test_trivial(self):
        plan = brute_force_partition(LayerCosts.from_arrays([4], [1]), RateContext((Target(0, 2, 1),)),
                                     Mode.MODEL)
        assert plan.model_blocks == (BlockAssignment(0, 1, 0),)


class TestLocalPlanning:
    def test_table_matches_slice_planner(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            c = random_cluster(rng, 1)
            costs = random_costs(rng, int(rng.integers(1, 10)))
            planner = LocalPlanner(c.nodes[0], 1.0, costs)
            n = costs.n_layers
            for a in range(n):
                for b in range(a + 1, n + 1):
                    want = planner.plan(a, b).predicted_latency
                    assert planner.table[a, b] == pytest.approx(want, rel=1e-12)
            assert np.isinf(planner.table[np.tril_indices(n + 1)]).all()

    def test_never_worse_than_one_processor(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            c = random_cluster(rng, 1)
            costs = random_costs(rng, 6)
            planner = LocalPlanner(c.nodes[0], 1.0, costs)
            share = float(rng.uniform(0.05, 1))
            got = planner.plan(1, 5, share).predicted_latency
            sl = costs.slice(1, 5, share)
            for p in c.nodes[0].processors:
                assert got <= single_processor_plan(sl, planner.ctx, p.id).predicted_latency

    def test_table_on_node_without_home(self):
        t = local_cost_table(three_layer(), RateContext((Target(0, 100.0, 10.0),)))
        assert t[0, 3] == pytest.approx(0 / 10 + 2.0 + 1 / 10)


def fig2_cluster():
    d1 = EdgeNode("device-1", (Processor(ProcessorKind.CPU, 2e9, 1e10), Processor(ProcessorKind.CPU, 2e9, 1e10),
                               Processor(ProcessorKind.GPU, 4e9, 1e10)), 1e5, id=0)
    d2 = EdgeNode("device-2", (Processor(ProcessorKind.GPU, 5e10, 1e10),), 1e6, id=1)
    return Cluster((d1, d2))


def fig2_model():
    return chain("fig2", TensorShape(128, 128, 16),
                 [("conv", 16, 3, 1, 1), ("pool", 4, 4, 0), ("conv", 8, 1, 1, 0),
                  ("conv", 256, 3, 1, 1), ("conv", 256, 3, 1, 1), ("flatten",), ("dense", 10)])


class TestHierarchical:
    def test_single_processor_cluster(self):
        c = Cluster((EdgeNode("solo", (Processor(ProcessorKind.CPU, 1e9, 1e9),), 1e7),))
        m = fig2_model()
        hp = hierarchical_partition(m, c)
        assert hp.nodes == (0,)
        assert hp.locals[0].targets == (0,)

    def test_global_model_local_data(self):
        hp = hierarchical_partition(fig2_model(), fig2_cluster())
        assert hp.mode is Mode.MODEL and hp.nodes == (0, 1)
        assert hp.locals[0].mode is Mode.DATA and hp.locals[0].data_split.sigma == 3
        assert set(hp.locals) == {0, 1}

    def test_every_node_has_a_local_plan(self):
        models = bundled_models()
        c = default_cluster()
        for m in models.values():
            hp = hierarchical_partition(m, c)
            assert set(hp.nodes) == set(hp.locals)

    def test_leader_unavailable(self):
        with pytest.raises(NoTargetError):
            hierarchical_partition(fig2_model(), fig2_cluster(), avail=[0, 1], leader=0)

    def test_respects_availability(self):
        rng = np.random.default_rng(8)
        for _ in range(40):
            c = random_cluster(rng, 4)
            m = random_model(rng)
            avail = [1] + [int(v) for v in rng.integers(0, 2, size=3)]
            hp = hierarchical_partition(m, c, avail, leader=0)
            assert all(avail[n] for n in hp.nodes)

    def test_offline_nodes_excluded_by_default(self):
        c = default_cluster().with_status(1, NodeStatus.OFFLINE)
        hp = hierarchical_partition(bundled_models()["VGG19"], c)
        assert 1 not in hp.nodes

    def test_refinement_never_worse_than_flat_plans(self):
        rng = np.random.default_rng(9)
        for _ in range(40):
            c = random_cluster(rng)
            m = random_model(rng)
            hp = hierarchical_partition(m, c)
            for s in (Strategy.HYBRID_GLOBAL, Strategy.LEADER_GPU_ONLY):
                assert hp.refined_latency <= plan_strategy(s, m, c).refined_latency

    def test_work_units_tile_rows(self):
        hp = hierarchical_partition(bundled_models()["VGG19"], default_cluster())
        units = work_units(hp.global_plan, bundled_models()["VGG19"].costs(), 224)
        if hp.mode is Mode.DATA:
            assert units[0].rows[0] == 0 and units[-1].rows[1] == 224
            assert all(a.rows[1] == b.rows[0] for a, b in zip(units, units[1:]))
