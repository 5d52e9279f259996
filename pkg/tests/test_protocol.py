import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgepart import protocol as proto
from edgepart.cost import Mode
from edgepart.errors import BusyError, FrameError, IncompleteError, OverlapError, ProtocolError

from frames import malformed_corpus, random_message
from fsm_driver import (FOLLOWER_VALID, LEADER, follower_pair_outcomes, leader_pair_outcomes,
                        leader_valid_pairs, make_plan, result_for, run_follower_cycle, run_leader_cycle)

PR = proto.PartialResult


class TestFraming:
    def test_probe_is_header_only(self):
        frame = proto.encode_message(proto.Message(proto.MsgType.STATUS_PROBE, 5, 2))
        assert len(frame) == 11
        assert proto.HEADER.unpack(frame) == (1, 5, 2, 0)

    def test_partial_result_layout(self):
        m = proto.Message(proto.MsgType.PARTIAL_RESULT, 9, 3, PR(1, 0, 112, 4096, 0.25))
        frame = proto.encode_message(m)
        assert len(frame) == m.frame_bytes == 11 + 2 + 4 + 4 + 8 + 8
        assert proto.decode_message(frame) == m

    def test_assign_carries_mode(self):
        a = proto.GlobalAssign(Mode.DATA, 2, 3, 0, 25, 150, 224, 1 / 3, 602112)
        m = proto.decode_message(proto.encode_message(proto.Message(proto.MsgType.GLOBAL_ASSIGN, 1, 0, a)))
        assert m.payload.mode is Mode.DATA and m.payload.share == 1 / 3

    def test_payload_type_checked(self):
        with pytest.raises(FrameError):
            proto.Message(proto.MsgType.STATUS_ACK, 1, 1, PR(0, 0, 1, 1, 0.0))
        with pytest.raises(FrameError):
            proto.Message(proto.MsgType.STATUS_PROBE, 1, 1, proto.StatusAck(0))

    def test_field_overflow(self):
        with pytest.raises(FrameError):
            proto.encode_message(proto.Message(proto.MsgType.STATUS_PROBE, 2**32, 0))

    def test_bad_status_code(self):
        with pytest.raises(FrameError):
            proto.StatusAck(3)

    def test_malformed_corpus(self):
        for frame in malformed_corpus(np.random.default_rng(0), 50):
            with pytest.raises(FrameError):
                proto.decode_message(frame)

    @settings(max_examples=300, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_round_trip(self, seed):
        m = random_message(np.random.default_rng(seed))
        assert proto.decode_message(proto.encode_message(m)) == m


class TestMerge:
    def test_rows_tile(self):
        out = proto.merge_results(Mode.DATA, [PR(1, 112, 224, 10, 0.5), PR(0, 0, 112, 12, 0.25)], 2, 224)
        assert (out.row_start, out.row_stop, out.byte_count) == (0, 224, 22)
        assert out.compute_duration == 0.75

    def test_pipeline_keeps_last(self):
        parts = [PR(k, 0, 7, 100 - k, 1.0) for k in range(3)]
        assert proto.merge_results(Mode.MODEL, parts, 3, 7).byte_count == 98

    @pytest.mark.parametrize("parts, exc", [
        ([PR(0, 0, 100, 1, 0.0)], IncompleteError),
        ([PR(0, 0, 100, 1, 0.0), PR(1, 120, 224, 1, 0.0)], IncompleteError),
        ([PR(0, 0, 130, 1, 0.0), PR(1, 120, 224, 1, 0.0)], OverlapError),
        ([PR(0, 0, 112, 1, 0.0), PR(0, 112, 224, 1, 0.0)], OverlapError),
        ([PR(0, 0, 112, 1, 0.0), PR(1, 112, 200, 1, 0.0)], IncompleteError),
    ])
    def test_bad_data_merges(self, parts, exc):
        with pytest.raises(exc):
            proto.merge_results(Mode.DATA, parts, 2, 224)

    def test_pipeline_missing_last(self):
        with pytest.raises(IncompleteError):
            proto.merge_results(Mode.MODEL, [PR(0, 0, 1, 1, 0.0)], 2, 1)


PLANS = [(Mode.MODEL, (0, 1, 2)), (Mode.DATA, (0, 1, 2)), (Mode.MODEL, (1, 0)), (Mode.DATA, (2, 1))]


class TestLeader:
    @pytest.mark.parametrize("mode, nodes", PLANS)
    def test_full_cycle_returns_to_analyze(self, mode, nodes):
        plan = make_plan(mode, nodes)
        phases, actions, merge = run_leader_cycle(plan)
        assert [p.value for p in phases[:5]] == ["Analyze", "Explore", "GlobalOffload", "LocalMap", "Execute"]
        assert phases[-2].value == "GlobalOffload" and phases[-1].value == "Analyze"
        assert len(merge) == 1 and len(merge[0].partials) == len(plan.units)
        report = actions[-1]
        assert isinstance(report, proto.Report) and report.request_id == 7

    def test_probes_skip_self(self):
        _, acts = proto.leader_step(proto.LeaderState(LEADER), proto.InferenceRequest(1, (0, 1, 2)))
        assert [a.dst for a in acts] == [1, 2]
        assert all(a.message.type is proto.MsgType.STATUS_PROBE for a in acts)

    def test_data_mode_assigns_all_followers_at_once(self):
        plan = make_plan(Mode.DATA, (0, 1, 2))
        _, actions, _ = run_leader_cycle(plan)
        sends = [a for a in actions if isinstance(a, proto.Send)
                 and a.message.type is proto.MsgType.GLOBAL_ASSIGN]
        assert sorted(a.dst for a in sends) == [1, 2]
        first_local = next(i for i, a in enumerate(actions) if isinstance(a, proto.RunLocalPlanner))
        assert all(actions.index(s) < first_local for s in sends)

    def test_model_mode_issues_blocks_in_order(self):
        plan = make_plan(Mode.MODEL, (0, 1, 2))
        _, actions, _ = run_leader_cycle(plan)
        issued = [a.block_id if isinstance(a, proto.ExecuteLocal) else a.message.payload.block_id
                  for a in actions if isinstance(a, proto.ExecuteLocal)
                  or (isinstance(a, proto.Send) and a.message.type is proto.MsgType.GLOBAL_ASSIGN)]
        assert issued == [0, 1, 2]

    def test_duplicate_result_rejected(self):
        plan = make_plan(Mode.DATA, (0, 1, 2))
        s = proto.LeaderState(LEADER)
        for ev in (proto.InferenceRequest(7, (0, 1, 2)), proto.ProbeReplies((1, 1, 1)),
                   proto.PlanReady(plan), proto.PlanReady(None)):
            s, _ = proto.leader_step(s, ev)
        done = proto.BlockDone(result_for(plan.units[0]))
        s, _ = proto.leader_step(s, done)
        with pytest.raises(ProtocolError):
            proto.leader_step(s, done)

    def test_result_for_other_request(self):
        plan = make_plan(Mode.DATA, (0, 1))
        s = proto.LeaderState(LEADER)
        for ev in (proto.InferenceRequest(7, (0, 1)), proto.ProbeReplies((1, 1)),
                   proto.PlanReady(plan), proto.PlanReady(None)):
            s, _ = proto.leader_step(s, ev)
        stale = proto.Message(proto.MsgType.PARTIAL_RESULT, 6, 1, result_for(plan.units[1]))
        with pytest.raises(ProtocolError):
            proto.leader_step(s, proto.PartialResultMsg(stale))

    @pytest.mark.parametrize("mode, nodes", PLANS)
    def test_every_pair_outside_the_table_raises(self, mode, nodes):
        plan = make_plan(mode, nodes)
        valid = leader_valid_pairs(plan)
        outcomes = leader_pair_outcomes(plan)
        assert len(outcomes) == 7 * 7
        for pair, outcome in outcomes.items():
            assert (outcome == "ok") == (pair in valid), pair


class TestFollower:
    def test_cycle(self):
        phases, actions, state = run_follower_cycle()
        assert [p.value for p in phases] == ["Analyze", "LocalMap", "Execute", "Analyze"]
        assert isinstance(actions[0], proto.RunLocalPlanner)
        assert isinstance(actions[1], proto.ExecuteLocal)
        reply = actions[2]
        assert reply.dst == LEADER and reply.message.type is proto.MsgType.PARTIAL_RESULT
        assert state.current is None

    def test_every_pair_outside_the_table_raises(self):
        outcomes = follower_pair_outcomes()
        assert len(outcomes) == 9
        for pair, outcome in outcomes.items():
            assert (outcome == "ok") == (pair in FOLLOWER_VALID), pair

    def test_second_assignment_is_busy(self):
        outcomes = follower_pair_outcomes()
        assert outcomes[("LocalMap", "GlobalAssignMsg")] == "BusyError"
        assert issubclass(BusyError, ProtocolError)

    def test_wrong_block_completion(self):
        _, _, _ = run_follower_cycle()
        a = proto.GlobalAssign(Mode.MODEL, 4, 5, 0, 1, 0, 1, 1.0, 1)
        s, _ = proto.follower_step(proto.FollowerState(2),
                                   proto.GlobalAssignMsg(proto.Message(proto.MsgType.GLOBAL_ASSIGN, 1, 0, a)))
        s, _ = proto.follower_step(s, proto.LocalPlanReady(None))
        with pytest.raises(ProtocolError):
            proto.follower_step(s, proto.ComputeDone(PR(3, 0, 1, 1, 0.0)))

    def test_assign_must_be_assign(self):
        probe = proto.Message(proto.MsgType.STATUS_PROBE, 1, 0)
        with pytest.raises(ProtocolError):
            proto.follower_step(proto.FollowerState(1), proto.GlobalAssignMsg(probe))
