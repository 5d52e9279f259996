"""End-to-end acceptance checks, one PASS/FAIL line per criterion.

Tolerances are pinned here and never adjusted to make a run pass.
"""
import time

import numpy as np

from edgepart import protocol as proto
from edgepart.cluster import default_cluster
from edgepart.cost import Mode
from edgepart.dnn import TensorShape, bundled_models, chain
from edgepart.errors import FrameError, ProtocolError
from edgepart.harness import (BASELINES, MIXES, PARTITIONING_BASELINES, Strategy, isolated_latencies,
                              plan_strategy, random_trace, report_csv, run_mix_suite, run_scenario,
                              simulate, sweep_nodes)
from edgepart.partitioner import brute_force_partition, dp_model_partition, hierarchical_partition
from edgepart.simnet import InferenceRequest

from frames import malformed_corpus, random_message
from fsm_driver import (FOLLOWER_VALID, follower_pair_outcomes, leader_pair_outcomes, leader_valid_pairs,
                        make_plan, run_follower_cycle, run_leader_cycle)
from instances import random_cluster, random_context, random_costs, random_model

DP_REL_TOL = 1e-9
DP_BUDGET_S = 60.0
SIM_REL_TOL = 1e-6
MEAN_GAIN = 0.20
SCALING_TOL = 1e-9
PLAN_BUDGET_S = 0.100


def test_c01_model_dp_matches_exhaustive_search(verdict):
    rng = np.random.default_rng(2024)
    worst, t0 = 0.0, time.perf_counter()
    for k in range(1000):
        costs = random_costs(rng, int(rng.integers(1, 9)))
        ctx = random_context(rng, int(rng.integers(1, 5)), with_home=bool(k % 2))
        dp = dp_model_partition(costs, ctx).predicted_latency
        bf = brute_force_partition(costs, ctx, Mode.MODEL).predicted_latency
        worst = max(worst, abs(dp - bf) / bf)
    elapsed = time.perf_counter() - t0
    verdict("C1 DP == brute force", worst <= DP_REL_TOL and elapsed < DP_BUDGET_S,
            f"1000 instances, max rel diff {worst:.2e} (tol {DP_REL_TOL:g}), {elapsed:.1f} s (budget {DP_BUDGET_S:g} s)")


def test_c02_hidp_never_loses_a_single_request(verdict):
    rng = np.random.default_rng(7)
    violations, n = [], 200
    for k in range(n):
        c = random_cluster(rng, int(rng.integers(2, 6)))
        m = random_model(rng, f"m{k}")
        leader = int(rng.integers(len(c.nodes)))
        ours = plan_strategy(Strategy.HIDP, m, c, leader=leader).refined_latency
        for s in BASELINES:
            theirs = plan_strategy(s, m, c, leader=leader).refined_latency
            if ours > theirs:
                violations.append((k, s.value, ours, theirs))
    verdict("C2 HiDP <= every baseline", not violations,
            f"{n} scenarios x {len(BASELINES)} baselines, {len(violations)} violations")


def test_c03_simulation_matches_planner(verdict):
    rng = np.random.default_rng(99)
    worst, n = 0.0, 100
    strategies = list(Strategy)
    for k in range(n):
        c = random_cluster(rng)
        m = random_model(rng, "m")
        leader = int(rng.integers(len(c.nodes)))
        s = strategies[k % len(strategies)]
        plan = plan_strategy(s, m, c, leader=leader)
        (rec,) = simulate(c, {"m": m}, [InferenceRequest(k, "m", 0.0, leader)], s).records
        worst = max(worst, abs(rec.exec_latency - plan.refined_latency) / plan.refined_latency)
    verdict("C3 simulated == planned latency", worst <= SIM_REL_TOL,
            f"{n} contention-free runs, max rel diff {worst:.2e} (tol {SIM_REL_TOL:g})")


def test_c04_mean_latency_gain_on_shipped_cluster(verdict):
    models = bundled_models()
    recs = isolated_latencies(default_cluster(), models)
    mean = {s: np.mean([recs[(s, name)].latency for name in models]) for s in Strategy}
    gains = {s.value: 1 - mean[Strategy.HIDP] / mean[s] for s in BASELINES}
    ok = all(g >= MEAN_GAIN for g in gains.values())
    detail = ", ".join(f"{k} {v:.1%}" for k, v in gains.items())
    verdict("C4 mean latency gain >= 20%", ok, f"HiDP {mean[Strategy.HIDP]:.4f} s; gain vs {detail}")


def test_c05_node_scaling(verdict):
    models = bundled_models()
    pts = sweep_nodes(default_cluster(), models, range(2, 6), [Strategy.HIDP, *PARTITIONING_BASELINES])
    lat = {(p.nodes, p.model, p.strategy): p.exec_latency for p in pts}
    problems, gaps = [], []
    for name in models:
        hidp = [lat[(k, name, "HiDP")] for k in range(2, 6)]
        if any(b > a * (1 + SCALING_TOL) for a, b in zip(hidp, hidp[1:])):
            problems.append(f"{name} HiDP latency rises: {hidp}")

        def advantage(k):
            best = min(lat[(k, name, s.value)] for s in PARTITIONING_BASELINES)
            return (best - lat[(k, name, "HiDP")]) / best
        gaps.append(f"{name} {advantage(2):.1%}->{advantage(5):.1%}")
        if advantage(2) < advantage(5) - SCALING_TOL:
            problems.append(f"{name} advantage {advantage(2):.3f} at 2 nodes < {advantage(5):.3f} at 5")
    verdict("C5 scaling 2..5 nodes", not problems,
            "; ".join(problems) or "HiDP monotone; advantage over strongest partitioning baseline, 2->5 nodes: "
            + ", ".join(gaps))


def test_c06_mix_throughput(verdict):
    report = run_mix_suite(default_cluster(), bundled_models(), MIXES)
    losses = []
    for mix in MIXES:
        ours = report.aggregate(mix, Strategy.HIDP).throughput_per_100s
        for s in BASELINES:
            theirs = report.aggregate(mix, s).throughput_per_100s
            if ours < theirs:
                losses.append(f"{mix}: {ours} < {s.value} {theirs}")
    verdict("C6 mix throughput", not losses, "; ".join(losses) or f"HiDP >= all baselines in {len(MIXES)} mixes")


def _collapse(phases):
    out = []
    for p in phases:
        if not out or out[-1] != p.value:
            out.append(p.value)
    return out


LEADER_CYCLE = ["Analyze", "Explore", "GlobalOffload", "LocalMap", "Execute", "GlobalOffload", "Analyze"]
FOLLOWER_CYCLE = ["Analyze", "LocalMap", "Execute", "Analyze"]


def test_c07_fsm_conformance(verdict):
    bad, checked = [], 0
    for mode, nodes in [(Mode.MODEL, (0, 1, 2)), (Mode.DATA, (0, 1, 2)), (Mode.MODEL, (1, 0)), (Mode.DATA, (2, 1))]:
        plan = make_plan(mode, nodes)
        if _collapse(run_leader_cycle(plan)[0]) != LEADER_CYCLE:
            bad.append(("leader cycle", mode.value, nodes))
        valid = leader_valid_pairs(plan)
        for pair, outcome in leader_pair_outcomes(plan).items():
            checked += 1
            if (outcome == "ok") != (pair in valid):
                bad.append(("leader", mode.value, pair, outcome))
    if _collapse(run_follower_cycle()[0]) != FOLLOWER_CYCLE:
        bad.append(("follower cycle",))
    for pair, outcome in follower_pair_outcomes().items():
        checked += 1
        if (outcome == "ok") != (pair in FOLLOWER_VALID):
            bad.append(("follower", pair, outcome))
    verdict("C7 FSM conformance", not bad, f"{checked} (state, event) pairs, {len(bad)} mismatches")


def test_c08_codec(verdict):
    rng = np.random.default_rng(8)
    lossy = 0
    for _ in range(10_000):
        m = random_message(rng)
        if proto.decode_message(proto.encode_message(m)) != m:
            lossy += 1
    corpus = malformed_corpus(rng)
    accepted = 0
    for frame in corpus:
        try:
            proto.decode_message(frame)
            accepted += 1
        except FrameError:
            pass
    verdict("C8 codec", lossy == 0 and accepted == 0,
            f"10000 round trips, {lossy} lossy; {len(corpus)} malformed frames, {accepted} accepted")


def test_c09_same_seed_same_csv(verdict):
    models = bundled_models()

    def once():
        trace = random_trace(sorted(models), 40, seed=1234, nodes=(0, 1, 2, 3, 4))
        return report_csv(run_scenario(default_cluster(), models, trace, list(Strategy), 30.0)).encode()
    a, b = once(), once()
    verdict("C9 deterministic CSV", a == b, f"{len(a)} bytes, identical={a == b}")


def deep_model(n_layers=200):
    specs = [("conv", 16 + (i % 5) * 8, 3, 1, 1) for i in range(n_layers - 3)]
    specs += [("pool", 2, 2, 0), ("flatten",), ("dense", 10)]
    return chain("deep", TensorShape(32, 32, 3), specs)


def test_c10_planning_time(verdict):
    model, cluster = deep_model(), default_cluster()
    assert model.n_layers == 200
    hierarchical_partition(model, cluster)         # warm caches and imports
    times = []
    for _ in range(5):
        t0 = time.perf_counter()
        hierarchical_partition(model, cluster)
        times.append(time.perf_counter() - t0)
    verdict("C10 planning time", max(times) < PLAN_BUDGET_S,
            f"200 layers, 5 nodes: worst of 5 runs {max(times) * 1e3:.1f} ms (budget {PLAN_BUDGET_S * 1e3:.0f} ms)")
