from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adhoc_ckpt.corpus import random_scenario_doc
from adhoc_ckpt.fig4 import FIG4_ITERATION, fig4_config
from adhoc_ckpt.netsim import Trace, TraceEntry, load_scenario, run
from adhoc_ckpt.verify import (
    CutPoint,
    GlobalSnapshot,
    VerifyError,
    check_at_most_one,
    check_nonblocking,
    check_protocol_order,
    find_orphans,
    oracle_minimum_set,
    snapshot_of_iteration,
    verify_trace,
)
from mutations import commit_before_acks, drop_request, inject_orphan, renumber


def entry(pos, node, kind, **detail):
    return TraceEntry(pos, pos, node, kind, detail)


def test_hand_built_orphan():
    t = Trace("h", [
        entry(1, 2, "Setup", members=[1, 2]),
        entry(2, 1, "CheckpointTaken", ckpt_kind="Tentative", seq=1, iteration="2.1"),
        entry(3, 1, "Send", mid="m1", type="AppMessage", src=1, dst=2, intra=True),
        entry(4, 2, "Deliver", mid="m1", type="AppMessage", src=1),
        entry(5, 2, "CheckpointTaken", ckpt_kind="Tentative", seq=1, iteration="2.1"),
    ])
    snap = GlobalSnapshot("2.1", {1: CutPoint(1, 2), 2: CutPoint(1, 5)})
    report = find_orphans(t, snap)
    assert not report.consistent
    assert [(o["sender"], o["receiver"], o["mid"]) for o in report.orphans] == [(1, 2, "m1")]


def test_message_sent_inside_cut_is_fine():
    t = Trace("h", [
        entry(1, 1, "Send", mid="m1", type="AppMessage", src=1, dst=2, intra=True),
        entry(2, 1, "CheckpointTaken", ckpt_kind="Tentative", seq=1, iteration="2.1"),
        entry(3, 2, "Deliver", mid="m1", type="AppMessage", src=1),
        entry(4, 2, "CheckpointTaken", ckpt_kind="Tentative", seq=1, iteration="2.1"),
    ])
    assert find_orphans(t, GlobalSnapshot("2.1", {1: CutPoint(1, 2), 2: CutPoint(1, 4)})).consistent


@pytest.fixture(scope="module")
def fig4():
    return run(fig4_config())


def test_fig4_is_clean(fig4):
    assert verify_trace(fig4) == []


def test_fig4_oracle_sets(fig4):
    assert oracle_minimum_set(fig4, "2.1") == {2, 3}
    assert oracle_minimum_set(fig4, FIG4_ITERATION) == {1, 2, 4, 5}


def test_fig4_snapshot_uses_older_checkpoint_for_p3(fig4):
    snap = snapshot_of_iteration(fig4, FIG4_ITERATION)
    assert snap.cut[3].seq == 1  # its checkpoint from the first round
    assert snap.cut[1].seq == 1 and snap.cut[2].seq == 2
    assert find_orphans(fig4, snap).consistent


def test_unknown_and_aborted_iterations_raise(fig4):
    with pytest.raises(VerifyError):
        snapshot_of_iteration(fig4, "9.9")
    with pytest.raises(VerifyError):
        oracle_minimum_set(fig4, "9.9")
    cfg = load_scenario({"n": 3, "edges": [[1, 3], [2, 3]], "events": [
        {"at": 0, "kind": "SendApp", "from": 1, "to": 3, "payload": "a"},
        {"at": 2, "kind": "Initiate", "node": 3},
        {"at": 2, "kind": "Abort", "node": 3},
    ]})
    t = run(cfg)
    assert [e.node for e in t.of_kind("AbortSent")] == [3, 3]
    with pytest.raises(VerifyError):
        snapshot_of_iteration(t, "3.1")
    assert verify_trace(t) == []


def test_at_most_one_flags_duplicate(fig4):
    extra = entry(0, 1, "CheckpointTaken", ckpt_kind="Tentative", seq=99, iteration=FIG4_ITERATION)
    doctored = renumber(fig4, fig4.entries[:-1] + [extra, fig4.entries[-1]])
    assert check_at_most_one(fig4, FIG4_ITERATION) == []
    found = check_at_most_one(doctored, FIG4_ITERATION)
    assert [v["node"] for v in found] == [1]


def test_nonblocking_allows_busy_windows_only():
    doc = {"n": 3, "edges": [[1, 3], [2, 3]], "events": [
        {"at": 0, "kind": "SendApp", "from": 1, "to": 3, "payload": "a"},
        {"at": 0, "kind": "BusyWindow", "node": 2, "duration": 4},
        {"at": 1, "kind": "SendApp", "from": 1, "to": 2, "payload": "b"},
        {"at": 2, "kind": "Initiate", "node": 3},
        {"at": 2, "kind": "SendApp", "from": 3, "to": 1, "payload": "c"},
        {"at": 2, "kind": "SendApp", "from": 1, "to": 2, "payload": "d"},
    ]}
    cfg = load_scenario(doc)
    assert check_nonblocking(run(cfg)) == []
    blocked = check_nonblocking(run(cfg, block_during_cstate=True))
    assert blocked and all(v["check"] == "nonblocking" for v in blocked)


def test_dropped_request_is_caught(fig4):
    found = verify_trace(drop_request(fig4, FIG4_ITERATION))
    assert "tentative_without_request" in {v["check"] for v in found}


def test_commit_before_acks_is_caught(fig4):
    doctored = commit_before_acks(fig4, FIG4_ITERATION)
    found = check_protocol_order(doctored)
    assert [v["check"] for v in found] == ["commit_before_ack"]
    assert found[0]["missing"] == [1, 4, 5]


def test_injected_orphan_is_caught(fig4):
    snap = snapshot_of_iteration(fig4, FIG4_ITERATION)
    doctored = inject_orphan(fig4, 5, 1, snap.cut[5].position, snap.cut[1].position)
    found = verify_trace(doctored)
    assert any(v["check"] == "orphan" and v["mid"] == "m-injected" for v in found)


def test_error_entries_are_reported(fig4):
    bad = renumber(fig4, fig4.entries + [entry(0, 1, "Error", reason="boom")])
    assert any(v["check"] == "error_entry" for v in verify_trace(bad))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(5, 40), st.integers(0, 6))
def test_stress_scenarios_verify_clean(seed, horizon, jitter):
    doc = random_scenario_doc(seed, horizon=horizon)
    doc["jitter"] = jitter
    trace = run(load_scenario(doc))
    assert verify_trace(trace) == []


def test_all_process_baseline_verifies_clean(fig4):
    base = run(fig4_config(), mode="all")
    assert verify_trace(base) == []
    perms = [e for e in base.of_kind("CheckpointPromoted") if e.detail["to"] == "Permanent"]
    assert len(perms) == 10


def test_verifier_reads_only_the_trace(fig4):
    stripped = replace(fig4, states={})
    assert verify_trace(stripped) == []
