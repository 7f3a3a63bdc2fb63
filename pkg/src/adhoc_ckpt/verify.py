"""Brute-force trace checks: consistency, minimality, at-most-one, non-blocking.

Everything here reads a :class:`~adhoc_ckpt.netsim.Trace` and nothing else; it
does not call into the protocol module. "Before" and "after" are judged by the
trace's global sequence numbers.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .netsim import Trace

REQUEST_TYPES = ("PrimaryRequest", "SecondaryRequest", "PropagatedRequest")
SEND_KINDS = ("Send", "RequestSent", "AckSent", "CommitSent", "AbortSent")


class VerifyError(ValueError):
    pass


@dataclass(frozen=True)
class CutPoint:
    seq: int | None  # checkpoint sequence number, None for the initial state
    position: int  # trace seq of the capture, 0 for the initial state


@dataclass
class GlobalSnapshot:
    iteration: str
    cut: dict = field(default_factory=dict)  # node -> CutPoint


@dataclass
class OrphanReport:
    orphans: list = field(default_factory=list)

    @property
    def consistent(self) -> bool:
        return not self.orphans


class TraceIndex:
    """Lookup tables built once per trace."""

    def __init__(self, trace: Trace):
        self.entries = trace.entries
        self.cluster: dict[int, tuple] = {}
        self.mode = "minimum"
        self.taken: dict[tuple[int, int], object] = {}
        self.permanent: dict[str, dict[int, int]] = defaultdict(dict)  # iteration -> node -> ckpt seq
        self.perm_pos: dict[tuple[int, int], int] = {}
        self.initiator: dict[str, int] = {}
        self.commit_pos: dict[str, int] = {}
        self.committed_set: dict[str, tuple] = {}
        self.aborted: set[str] = set()
        self.boundary: dict[tuple[int, str], int] = {}
        self.sends: dict[str, object] = {}
        self.app_recv: dict[str, object] = {}
        self.delivers: dict[str, object] = {}
        self.commit_seen: dict[int, list] = defaultdict(list)  # node -> [(pos, iteration)]
        for e in self.entries:
            d = e.detail
            if e.kind == "Setup":
                self.cluster[e.node] = tuple(d.get("members", ()))
                self.mode = d.get("mode", self.mode)
            elif e.kind == "CheckpointTaken":
                self.taken[(e.node, d["seq"])] = e
                if d.get("initiator"):
                    self.initiator[d["iteration"]] = e.node
            elif e.kind == "CheckpointPromoted" and d.get("to") == "Permanent":
                self.permanent[d["iteration"]][e.node] = d["seq"]
                self.perm_pos[(e.node, d["seq"])] = e.seq
                if "minimum_set" in d:
                    self.commit_pos[d["iteration"]] = e.seq
                    self.committed_set[d["iteration"]] = tuple(d["minimum_set"])
                    self.commit_seen[e.node].append((e.seq, d["iteration"]))
            elif e.kind == "CheckpointDiscarded" and self.initiator.get(d.get("iteration")) == e.node:
                self.aborted.add(d["iteration"])
            elif e.kind == "CsnUpdate" and d.get("reason") == "boundary":
                self.boundary.setdefault((e.node, d["iteration"]), e.seq)
            elif e.kind in SEND_KINDS:
                self.sends[d["mid"]] = e
            elif e.kind == "Deliver":
                self.delivers.setdefault(d["mid"], e)
            elif e.kind == "Process":
                if d.get("type") == "AppMessage":
                    self.app_recv.setdefault(d["mid"], e)
                elif d.get("type") == "Commit":
                    self.commit_seen[e.node].append((e.seq, d["iteration"]))

    def iterations(self) -> list[str]:
        return sorted(self.initiator, key=lambda it: self.taken_pos_of_initiation(it))

    def taken_pos_of_initiation(self, it: str) -> int:
        h = self.initiator[it]
        for (node, _), e in self.taken.items():
            if node == h and e.detail.get("iteration") == it and e.detail.get("initiator"):
                return e.seq
        return 0

    def members_of(self, node: int) -> tuple:
        return self.cluster.get(node, ())

    def surviving_positions(self, node: int, exclude: str | None = None) -> list[tuple[int, int]]:
        """(capture position, seq) of ``node``'s checkpoints that became permanent."""
        out = []
        for it, nodes in self.permanent.items():
            if it == exclude or node not in nodes:
                continue
            seq = nodes[node]
            out.append((self.taken[(node, seq)].seq, seq))
        return sorted(out)

    def is_intra(self, send) -> bool:
        d = send.detail
        return d.get("intra", True) and d["dst"] in self.members_of(send.node)


def _require_committed(idx: TraceIndex, iteration: str) -> None:
    if iteration not in idx.initiator:
        raise VerifyError(f"unknown iteration {iteration!r}")
    if iteration not in idx.commit_pos:
        raise VerifyError(f"iteration {iteration!r} was not committed")


def snapshot_of_iteration(trace: Trace, iteration: str) -> GlobalSnapshot:
    idx = TraceIndex(trace)
    _require_committed(idx, iteration)
    members = idx.permanent[iteration]
    earlier = {it for it, pos in idx.commit_pos.items() if pos < idx.commit_pos[iteration]}
    snap = GlobalSnapshot(iteration)
    for node in idx.members_of(idx.initiator[iteration]):
        if node in members:
            seq = members[node]
            snap.cut[node] = CutPoint(seq, idx.taken[(node, seq)].seq)
            continue
        best = CutPoint(None, 0)
        for it in earlier:
            seq = idx.permanent[it].get(node)
            if seq is not None:
                pos = idx.taken[(node, seq)].seq
                if pos > best.position:
                    best = CutPoint(seq, pos)
        snap.cut[node] = best
    return snap


def find_orphans(trace: Trace, snapshot: GlobalSnapshot) -> OrphanReport:
    """An application message is an orphan when its receipt is inside the cut
    but its send is outside it."""
    sends = {}
    recvs = {}
    for e in trace.entries:
        d = e.detail
        if e.kind == "Send":
            sends[d["mid"]] = e
        elif e.kind == "Process" and d.get("type", "AppMessage") == "AppMessage":
            recvs[d["mid"]] = e
        elif e.kind == "Deliver" and d.get("type", "AppMessage") == "AppMessage":
            # a message still counts as received if it was never processed
            recvs.setdefault(d["mid"], e)
    report = OrphanReport()
    for mid, s in sends.items():
        r = recvs.get(mid)
        if r is None:
            continue
        src, dst = s.node, r.node
        if src not in snapshot.cut or dst not in snapshot.cut:
            continue
        if r.seq < snapshot.cut[dst].position and s.seq > snapshot.cut[src].position:
            report.orphans.append({
                "mid": mid, "sender": src, "receiver": dst, "send_seq": s.seq, "deliver_seq": r.seq,
                "cut": {"sender": snapshot.cut[src].position, "receiver": snapshot.cut[dst].position},
            })
    return report


def _windows(idx: TraceIndex, iteration: str) -> dict[int, tuple[int, int]]:
    """Per cluster node: (start, end) positions of the interval this iteration closes."""
    end_default = idx.commit_pos.get(iteration, len(idx.entries) + 1)
    windows = {}
    for node in idx.members_of(idx.initiator[iteration]):
        seq = idx.permanent.get(iteration, {}).get(node)
        if seq is not None:
            end = idx.taken[(node, seq)].seq
        else:
            end = idx.boundary.get((node, iteration), end_default)
        start = 0
        for pos, _ in idx.surviving_positions(node, exclude=iteration):
            if pos < end:
                start = pos
        windows[node] = (start, end)
    return windows


def _knows_covered(idx: TraceIndex, receiver: int, at: int, sender: int, send_pos: int) -> bool:
    for pos, it in idx.commit_seen.get(receiver, ()):
        if pos >= at:
            continue
        seq = idx.permanent.get(it, {}).get(sender)
        if seq is not None and idx.taken[(sender, seq)].seq > send_pos:
            return True
    return False


def _sent_in(idx: TraceIndex, node: int, window: tuple[int, int]) -> bool:
    start, end = window
    return any(
        s.node == node and start < s.seq < end and idx.is_intra(s)
        for s in idx.sends.values()
        if s.kind == "Send"
    )


def oracle_minimum_set(trace: Trace, iteration: str) -> frozenset:
    """Rebuild the dependency relation from application sends and receipts and
    return the initiator's closure.

    ``j`` depends on ``k`` when ``j`` processed a message from ``k`` inside the
    interval this iteration closes, unless ``j`` had already heard of a commit
    whose checkpoint at ``k`` postdates the send. A reached node joins only if it
    sent something in its own interval.
    """
    idx = TraceIndex(trace)
    if iteration not in idx.initiator:
        raise VerifyError(f"unknown iteration {iteration!r}")
    head = idx.initiator[iteration]
    members = set(idx.members_of(head))
    windows = _windows(idx, iteration)
    edges: dict[int, set[int]] = defaultdict(set)
    for mid, r in idx.app_recv.items():
        s = idx.sends.get(mid)
        if s is None or not idx.is_intra(s):
            continue
        j, k = r.node, s.node
        if j not in members or k not in members:
            continue
        start, end = windows[j]
        if not start < r.seq < end:
            continue
        if _knows_covered(idx, j, r.seq, k, s.seq):
            continue
        edges[j].add(k)
    result = {head}
    seen = {head}
    stack = [head]
    while stack:
        j = stack.pop()
        for k in sorted(edges[j]):
            if k in seen:
                continue
            seen.add(k)
            if _sent_in(idx, k, windows[k]):
                result.add(k)
                stack.append(k)
    return frozenset(result)


def check_idle_members(trace: Trace, iteration: str) -> list[dict]:
    """Non-initiators in the committed set that sent nothing in their interval."""
    idx = TraceIndex(trace)
    _require_committed(idx, iteration)
    windows = _windows(idx, iteration)
    head = idx.initiator[iteration]
    return [
        {"check": "idle_member", "iteration": iteration, "node": node}
        for node in idx.committed_set[iteration]
        if node != head and not _sent_in(idx, node, windows[node])
    ]


def check_at_most_one(trace: Trace, iteration: str) -> list[dict]:
    kept: dict[int, set] = defaultdict(set)
    dropped: set = set()
    for e in trace.entries:
        d = e.detail
        if d.get("iteration") != iteration:
            continue
        if e.kind in ("CheckpointTaken", "CheckpointPromoted"):
            kept[e.node].add(d["seq"])
        elif e.kind == "CheckpointDiscarded":
            dropped.add((e.node, d["seq"]))
    out = []
    for node, seqs in sorted(kept.items()):
        alive = sorted(s for s in seqs if (node, s) not in dropped)
        if len(alive) > 1:
            out.append({"check": "at_most_one", "iteration": iteration, "node": node, "seqs": alive})
    return out


def check_nonblocking(trace: Trace) -> list[dict]:
    """Every delivered application message must be processed at its delivery
    time, or at the end of a declared busy window covering it."""
    busy: dict[int, list] = defaultdict(list)
    delivers = {}
    processed = {}
    for e in trace.entries:
        d = e.detail
        if e.kind == "Busy":
            busy[e.node].append((e.time, d["until"]))
        elif e.kind == "Deliver" and d.get("type") == "AppMessage":
            delivers.setdefault(d["mid"], e)
        elif e.kind == "Process" and d.get("type") == "AppMessage":
            processed.setdefault(d["mid"], e)
    out = []
    for mid, dl in delivers.items():
        allowed = dl.time
        grew = True
        while grew:
            grew = False
            for start, until in busy[dl.node]:
                if start <= allowed < until:
                    allowed, grew = until, True
        p = processed.get(mid)
        if p is None:
            out.append({"check": "nonblocking", "mid": mid, "node": dl.node, "reason": "never processed"})
        elif p.time > allowed:
            out.append({"check": "nonblocking", "mid": mid, "node": dl.node, "delay": p.time - dl.time,
                        "allowed": allowed - dl.time})
    return out


def check_protocol_order(trace: Trace) -> list[dict]:
    """Causal sanity of control traffic: deliveries follow sends, acks and
    requested checkpoints follow a request, commits follow every member's ack."""
    sent: set[str] = set()
    requested: set[tuple[int, str]] = set()
    acked: dict[str, set] = defaultdict(set)
    ack_taken: dict[str, bool] = {}
    committed_at: set[tuple[int, str]] = set()
    starters: dict[str, int] = {}
    out = []
    commit_checked: set[str] = set()

    def check_commit(it: str, minimum_set, where: int) -> None:
        if it in commit_checked:
            return
        commit_checked.add(it)
        missing = sorted(set(minimum_set) - acked[it] - {starters.get(it)})
        if missing:
            out.append({"check": "commit_before_ack", "iteration": it, "missing": missing, "seq": where})

    for e in trace.entries:
        d = e.detail
        if e.kind in SEND_KINDS:
            sent.add(d["mid"])
            if e.kind == "AckSent":
                ack_taken[d["mid"]] = bool(d.get("taken"))
                if (e.node, d["iteration"]) not in requested:
                    out.append({"check": "ack_without_request", "node": e.node, "iteration": d["iteration"],
                                "seq": e.seq})
            elif e.kind == "CommitSent":
                check_commit(d["iteration"], d["minimum_set"], e.seq)
        elif e.kind == "Deliver":
            if d["mid"] not in sent:
                out.append({"check": "deliver_without_send", "mid": d["mid"], "seq": e.seq})
        elif e.kind == "Process":
            t = d.get("type")
            if t in REQUEST_TYPES:
                requested.add((e.node, d["iteration"]))
            elif t == "Ack":
                if ack_taken.get(d["mid"]):
                    acked[d["iteration"]].add(d["src"])
            elif t == "Commit":
                committed_at.add((e.node, d["iteration"]))
        elif e.kind == "CheckpointTaken":
            if d.get("initiator"):
                starters[d["iteration"]] = e.node
            elif d["ckpt_kind"] == "Tentative" and "induced_by" not in d and (e.node, d["iteration"]) not in requested:
                out.append({"check": "tentative_without_request", "node": e.node, "iteration": d["iteration"],
                            "seq": e.seq})
        elif e.kind == "CheckpointPromoted":
            it = d["iteration"]
            if d["to"] == "Tentative" and (e.node, it) not in requested:
                out.append({"check": "tentative_without_request", "node": e.node, "iteration": it, "seq": e.seq})
            elif d["to"] == "Permanent":
                if "minimum_set" in d:
                    check_commit(it, d["minimum_set"], e.seq)
                elif (e.node, it) not in committed_at:
                    out.append({"check": "permanent_without_commit", "node": e.node, "iteration": it,
                                "seq": e.seq})
    return out


def verify_trace(trace: Trace) -> list[dict]:
    """All checks over every committed iteration; empty list means clean."""
    idx = TraceIndex(trace)
    out: list[dict] = []
    for it in idx.iterations():
        if it not in idx.commit_pos:
            continue
        report = find_orphans(trace, snapshot_of_iteration(trace, it))
        out += [{"check": "orphan", "iteration": it, **o} for o in report.orphans]
        if idx.mode == "minimum":
            oracle = oracle_minimum_set(trace, it)
            committed = frozenset(idx.committed_set[it])
            if oracle != committed:
                out.append({"check": "minimum_set", "iteration": it, "committed": sorted(committed),
                            "oracle": sorted(oracle)})
            out += check_idle_members(trace, it)
        out += check_at_most_one(trace, it)
    out += check_nonblocking(trace)
    out += check_protocol_order(trace)
    out += [{"check": "error_entry", "seq": e.seq, "node": e.node, **e.detail} for e in trace.of_kind("Error")]
    return out
