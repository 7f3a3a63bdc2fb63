"""Trace doctoring used to show the oracles are not vacuous."""

from dataclasses import replace

from adhoc_ckpt.netsim import Trace, TraceEntry


def renumber(trace: Trace, entries: list) -> Trace:
    return Trace(trace.scenario_hash, [replace(e, seq=i) for i, e in enumerate(entries, start=1)], trace.digests)


def drop_request(trace: Trace, iteration: str) -> Trace:
    """Remove one request of ``iteration`` from the wire entirely: send, delivery and processing."""
    sent = [e for e in trace.of_kind("RequestSent") if e.detail["iteration"] == iteration]
    mid = sent[0].detail["mid"]
    return renumber(trace, [e for e in trace.entries if e.detail.get("mid") != mid])


def commit_before_acks(trace: Trace, iteration: str) -> Trace:
    """Move the initiator's commit ahead of the first ack it processed."""
    entries = list(trace.entries)
    commit = [e for e in entries
              if (e.kind == "CheckpointPromoted" and e.detail.get("iteration") == iteration
                  and "minimum_set" in e.detail)
              or (e.kind == "CommitSent" and e.detail["iteration"] == iteration)]
    first_ack = next(i for i, e in enumerate(entries)
                     if e.kind == "Process" and e.detail.get("type") == "Ack"
                     and e.detail.get("iteration") == iteration)
    rest = [e for e in entries if e not in commit]
    return renumber(trace, rest[:first_ack] + commit + rest[first_ack:])


def inject_orphan(trace: Trace, sender: int, receiver: int, after_seq: int, before_seq: int) -> Trace:
    """Add an application message sent after ``after_seq`` and processed before ``before_seq``."""
    entries = list(trace.entries)
    time = entries[max(after_seq, 1) - 1].time
    mid = "m-injected"
    send = TraceEntry(0, time, sender, "Send", {"mid": mid, "type": "AppMessage", "src": sender, "dst": receiver,
                                                "payload": "x", "pb_own_csn": 0, "pb_c_state": False,
                                                "pb_iteration": None, "intra": True, "hops": 1})
    recv = [TraceEntry(0, time, receiver, "Deliver", {"mid": mid, "type": "AppMessage", "src": sender}),
            TraceEntry(0, time, receiver, "Process", {"mid": mid, "type": "AppMessage", "src": sender})]
    out = [send] if after_seq == 0 else []
    for e in entries:
        if e.seq == before_seq:
            out += recv
        out.append(e)
        if e.seq == after_seq:
            out.append(send)
    return renumber(trace, out)
