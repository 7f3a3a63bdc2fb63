"""Per-node checkpointing state machine.

Every transition is a pure function ``(ProcessState, input) -> StepOutput``;
scheduling and message transport live in :mod:`adhoc_ckpt.netsim`.

Iterations are named ``"<initiator>.<initiator csn>"``. A node is *participating*
(``c_state``) from the moment it takes a checkpoint for an iteration, or advances
its csn without one, until it hears that iteration's commit or abort.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

MUTABLE = "Mutable"
TENTATIVE = "Tentative"
PERMANENT = "Permanent"

MINIMUM = "minimum"
ALL_PROCESS = "all"


class ProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class Checkpoint:
    owner: int
    seq: int
    kind: str
    dv_at_capture: tuple
    app_state: tuple
    iteration: str | None = None
    sent_at_capture: bool = False
    known_csn: tuple = ()
    committed_seq: tuple = ()


# -- messages ---------------------------------------------------------------


@dataclass(frozen=True)
class AppMessage:
    src: int
    dst: int
    payload: object
    pb_own_csn: int
    pb_c_state: bool
    pb_iteration: str | None = None
    # sender's dependency row, only attached on messages to the clusterhead
    pb_dv: tuple | None = None
    intra: bool = True
    mid: str = ""


@dataclass(frozen=True)
class Request:
    src: int
    dst: int
    initiator: int
    init_csn: int
    known_minset: frozenset
    mid: str = ""

    @property
    def iteration(self) -> str:
        return f"{self.initiator}.{self.init_csn}"


class PrimaryRequest(Request):
    pass


class SecondaryRequest(Request):
    pass


class PropagatedRequest(Request):
    pass


@dataclass(frozen=True)
class Ack:
    src: int
    dst: int
    iteration: str
    request_from: int
    taken: bool
    seq: int | None = None
    extra_dependents: tuple = ()
    mid: str = ""


@dataclass(frozen=True)
class Commit:
    src: int
    dst: int
    initiator: int
    iteration: str
    minimum_set: tuple
    seqs: tuple = ()  # (member, checkpoint seq) pairs
    mid: str = ""


@dataclass(frozen=True)
class Abort:
    src: int
    dst: int
    initiator: int
    iteration: str
    mid: str = ""


Message = AppMessage | Request | Ack | Commit | Abort


# -- state ------------------------------------------------------------------


@dataclass(frozen=True)
class ProcessState:
    node: int
    n: int
    head: int | None
    members: tuple
    mode: str = MINIMUM
    csn: int = 1
    known_csn: tuple = ()
    committed_seq: tuple = ()
    dv: tuple = ()
    c_state: bool = False
    c_iter: str | None = None
    sent_since_ckpt: bool = False
    app_state: tuple = (0, 0, "")
    checkpoints: tuple = ()
    finished: frozenset = frozenset()
    # initiator bookkeeping
    iteration: str | None = None
    issued: frozenset = frozenset()
    resolved: frozenset = frozenset()
    taken_members: tuple = ()  # (member, seq) pairs
    known_rows: tuple = ()  # (member, csn, row ids) triples learned from piggybacks

    @property
    def pending(self) -> Checkpoint | None:
        for c in self.checkpoints:
            if c.kind != PERMANENT:
                return c
        return None

    @property
    def dv_ids(self) -> tuple:
        return tuple(i + 1 for i, bit in enumerate(self.dv) if bit)

    def to_dict(self) -> dict:
        return {
            "node": self.node,
            "csn": self.csn,
            "c_state": self.c_state,
            "c_iter": self.c_iter,
            "sent_since_ckpt": self.sent_since_ckpt,
            "dv": list(self.dv_ids),
            "known_csn": list(self.known_csn),
            "committed_seq": list(self.committed_seq),
            "app_state": list(self.app_state),
            "checkpoints": [[c.seq, c.kind, c.iteration] for c in self.checkpoints],
        }

    def digest(self) -> str:
        raw = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(raw).hexdigest()[:16]


@dataclass
class StepOutput:
    new_state: ProcessState
    outbound: list = field(default_factory=list)  # (dst, Message)
    events: list = field(default_factory=list)  # dicts with a "kind" key


def init_process(
    node: int,
    n: int,
    *,
    head: int | None = None,
    members: Iterable[int] | None = None,
    mode: str = MINIMUM,
) -> ProcessState:
    if not isinstance(node, int) or not 1 <= node <= n:
        raise ProtocolError(f"node id {node!r} outside 1..{n}")
    members = tuple(sorted(members)) if members is not None else tuple(range(1, n + 1))
    if node not in members:
        raise ProtocolError(f"node {node} is not a member of its own cluster")
    if mode not in (MINIMUM, ALL_PROCESS):
        raise ProtocolError(f"unknown mode {mode!r}")
    return ProcessState(
        node=node,
        n=n,
        head=head,
        members=members,
        mode=mode,
        known_csn=(1,) * n,
        committed_seq=(0,) * n,
        dv=(False,) * n,
    )


def _set(t: tuple, node: int, value) -> tuple:
    lst = list(t)
    lst[node - 1] = value
    return tuple(lst)


def _app_digest(prev: str, payload) -> str:
    return hashlib.sha256(f"{prev}|{payload!r}".encode()).hexdigest()[:16]


def take_checkpoint(state: ProcessState, kind: str, iteration: str | None) -> ProcessState:
    if kind not in (MUTABLE, TENTATIVE):
        raise ProtocolError(f"cannot take a {kind} checkpoint directly")
    if state.pending is not None:
        raise ProtocolError(
            f"node {state.node} already holds {state.pending.kind} checkpoint {state.pending.seq}"
        )
    ckpt = Checkpoint(
        owner=state.node,
        seq=state.csn,
        kind=kind,
        dv_at_capture=state.dv,
        app_state=state.app_state,
        iteration=iteration,
        sent_at_capture=state.sent_since_ckpt,
        known_csn=state.known_csn,
        committed_seq=state.committed_seq,
    )
    return replace(
        state,
        checkpoints=state.checkpoints + (ckpt,),
        csn=state.csn + 1,
        dv=(False,) * state.n,
        sent_since_ckpt=False,
        c_state=True,
        c_iter=iteration,
    )


def _taken_event(state: ProcessState, **extra) -> dict:
    c = state.checkpoints[-1]
    return {"kind": "CheckpointTaken", "ckpt_kind": c.kind, "seq": c.seq,
            "iteration": c.iteration, "dv": [i + 1 for i, b in enumerate(c.dv_at_capture) if b], **extra}


def _boundary(state: ProcessState, iteration: str) -> tuple[ProcessState, dict]:
    # Last permanent checkpoint stands in for this iteration; later sends carry the trigger.
    new = replace(state, csn=state.csn + 1, c_state=True, c_iter=iteration)
    return new, {"kind": "CsnUpdate", "reason": "boundary", "csn": new.csn, "iteration": iteration}


def _discard(state: ProcessState, ckpt: Checkpoint) -> tuple[ProcessState, dict]:
    # csn is never lowered: peers may already hold the higher value.
    dv = tuple(a or b for a, b in zip(ckpt.dv_at_capture, state.dv))
    new = replace(
        state,
        checkpoints=tuple(c for c in state.checkpoints if c is not ckpt),
        dv=dv,
        sent_since_ckpt=state.sent_since_ckpt or ckpt.sent_at_capture,
    )
    event = {"kind": "CheckpointDiscarded", "seq": ckpt.seq, "ckpt_kind": ckpt.kind,
             "iteration": ckpt.iteration}
    return new, event


def _promote(state: ProcessState, ckpt: Checkpoint, to: str, iteration: str) -> tuple[ProcessState, dict]:
    promoted = replace(ckpt, kind=to, iteration=iteration)
    new = replace(state, checkpoints=tuple(promoted if c is ckpt else c for c in state.checkpoints))
    event = {"kind": "CheckpointPromoted", "seq": ckpt.seq, "from": ckpt.kind, "to": to,
             "iteration": iteration}
    return new, event


# -- application traffic ----------------------------------------------------


def send_app_message(state: ProcessState, dst: int, payload) -> StepOutput:
    if dst == state.node:
        raise ProtocolError("a node cannot send to itself")
    intra = dst in state.members
    pb_dv = None
    if intra and dst == state.head:
        pb_dv = state.dv_ids
    msg = AppMessage(
        src=state.node,
        dst=dst,
        payload=payload,
        pb_own_csn=state.csn,
        pb_c_state=state.c_state,
        pb_iteration=state.c_iter,
        pb_dv=pb_dv,
        intra=intra,
    )
    sent, received, digest = state.app_state
    new = replace(
        state,
        app_state=(sent + 1, received, digest),
        sent_since_ckpt=state.sent_since_ckpt or intra,
    )
    return StepOutput(new, [(dst, msg)], [])


def recv_app_message(state: ProcessState, m: AppMessage) -> StepOutput:
    """Handle a piggybacked application message without ever deferring it.

    A live trigger (sender participating in an iteration this node has not yet
    seen finish, fresh csn, receiver not participating) forces a mutable
    checkpoint before processing when the receiver has sent since its last
    checkpoint, and only advances its csn otherwise.
    """
    events: list[dict] = []
    src = m.src
    if m.intra and src in state.members:
        fresh = m.pb_own_csn > state.known_csn[src - 1]
        live = m.pb_c_state and m.pb_iteration is not None and m.pb_iteration not in state.finished
        if fresh and live and not state.c_state:
            if state.mode == ALL_PROCESS:
                state = take_checkpoint(state, TENTATIVE, m.pb_iteration)
                events.append(_taken_event(state, induced_by=m.mid))
            elif state.sent_since_ckpt:
                state = take_checkpoint(state, MUTABLE, m.pb_iteration)
                events.append(_taken_event(state, induced_by=m.mid))
            else:
                state, ev = _boundary(state, m.pb_iteration)
                events.append(ev)
        if fresh:
            state = replace(state, known_csn=_set(state.known_csn, src, m.pb_own_csn))
            events.append({"kind": "CsnUpdate", "reason": "piggyback", "peer": src, "value": m.pb_own_csn})
        stale = m.pb_own_csn <= state.committed_seq[src - 1]
        if stale:
            events.append({"kind": "Ignored", "reason": "stale dependency", "mid": m.mid, "peer": src})
        elif not state.dv[src - 1]:
            state = replace(state, dv=_set(state.dv, src, True))
            events.append({"kind": "DvUpdate", "peer": src})
        if m.pb_dv is not None and state.node == state.head and not stale:
            rows = {r[0]: r for r in state.known_rows}
            prev = rows.get(src)
            if prev is None or prev[1] <= m.pb_own_csn:
                rows[src] = (src, m.pb_own_csn, tuple(m.pb_dv))
                state = replace(state, known_rows=tuple(rows[k] for k in sorted(rows)))
    sent, received, digest = state.app_state
    state = replace(state, app_state=(sent, received + 1, _app_digest(digest, m.payload)))
    events.append({"kind": "Process", "mid": m.mid, "src": src, "type": "AppMessage"})
    return StepOutput(state, [], events)


# -- checkpoint iteration ---------------------------------------------------


def compute_minset(dv_rows: Mapping[int, Sequence[bool]], initiator: int) -> frozenset:
    """Dependency closure of ``initiator`` over whichever rows are available."""
    result = {initiator}
    stack = [initiator]
    while stack:
        j = stack.pop()
        for k, bit in enumerate(dv_rows.get(j, ()), start=1):
            if bit and k not in result:
                result.add(k)
                stack.append(k)
    return frozenset(result)


def initiate_checkpoint(state: ProcessState) -> StepOutput:
    if state.head != state.node:
        raise ProtocolError(f"node {state.node} is not the clusterhead and cannot initiate")
    if state.iteration is not None:
        raise ProtocolError(f"iteration {state.iteration} still in progress")
    iteration = f"{state.node}.{state.csn}"
    state = take_checkpoint(state, TENTATIVE, iteration)
    ckpt = state.checkpoints[-1]
    events = [_taken_event(state, initiator=True)]
    if state.mode == ALL_PROCESS:
        known = frozenset(state.members)
    else:
        rows = {state.node: ckpt.dv_at_capture}
        for member, _, row in state.known_rows:
            if member in state.members and member != state.node:
                rows[member] = tuple(i + 1 in row for i in range(state.n))
        known = compute_minset(rows, state.node) & frozenset(state.members)
    targets = sorted(known - {state.node})
    outbound = [
        (k, PrimaryRequest(src=state.node, dst=k, initiator=state.node, init_csn=ckpt.seq, known_minset=known))
        for k in targets
    ]
    state = replace(
        state,
        iteration=iteration,
        issued=frozenset((state.node, k) for k in targets),
        resolved=frozenset(),
        taken_members=((state.node, ckpt.seq),),
    )
    out = StepOutput(state, outbound, events)
    if not targets:
        out = _merge(out, _commit(state))
    return out


def _merge(first: StepOutput, second: StepOutput) -> StepOutput:
    return StepOutput(second.new_state, first.outbound + second.outbound, first.events + second.events)


def _ack(state: ProcessState, req: Request, taken: bool, seq, extra=()) -> tuple:
    return (req.initiator, Ack(src=state.node, dst=req.initiator, iteration=req.iteration,
                               request_from=req.src, taken=taken, seq=seq, extra_dependents=tuple(extra)))


def recv_checkpoint_request(state: ProcessState, req: Request) -> StepOutput:
    it = req.iteration
    events: list[dict] = [{"kind": "Process", "mid": req.mid, "src": req.src, "type": type(req).__name__,
                           "iteration": it}]
    if it in state.finished or state.iteration == it:
        events.append({"kind": "Ignored", "reason": "request for finished or own iteration", "mid": req.mid})
        return StepOutput(state, [], events)
    pending = state.pending
    if (pending is not None and pending.iteration != it) or (state.c_state and state.c_iter != it):
        raise ProtocolError(f"node {state.node} got a request for {it} while {state.c_iter} is unfinished")

    if pending is not None and pending.kind == TENTATIVE:
        events.append({"kind": "Ignored", "reason": "duplicate request", "mid": req.mid})
        return StepOutput(state, [_ack(state, req, True, pending.seq)], events)

    if state.c_state and pending is None:
        # already advanced past this iteration without a checkpoint
        return StepOutput(state, [_ack(state, req, False, None)], events)

    if pending is not None:
        state, ev = _promote(state, pending, TENTATIVE, it)
        events.append(ev)
        state = replace(state, c_state=True, c_iter=it)
    elif state.mode == MINIMUM and not state.sent_since_ckpt:
        state, ev = _boundary(state, it)
        events.append(ev)
        return StepOutput(state, [_ack(state, req, False, None)], events)
    else:
        state = take_checkpoint(state, TENTATIVE, it)
        events.append(_taken_event(state))

    ckpt = state.pending
    outbound = []
    targets: list[int] = []
    if state.mode == MINIMUM:
        targets = [
            k for k, bit in enumerate(ckpt.dv_at_capture, start=1)
            if bit and k not in req.known_minset and k in state.members
        ]
        known = req.known_minset | {state.node} | frozenset(targets)
        cls = SecondaryRequest if isinstance(req, PrimaryRequest) else PropagatedRequest
        outbound = [
            (k, cls(src=state.node, dst=k, initiator=req.initiator, init_csn=req.init_csn, known_minset=known))
            for k in targets
        ]
    outbound.append(_ack(state, req, True, ckpt.seq, targets))
    return StepOutput(state, outbound, events)


def recv_ack(state: ProcessState, ack: Ack) -> StepOutput:
    events: list[dict] = [{"kind": "Process", "mid": ack.mid, "src": ack.src, "type": "Ack",
                           "iteration": ack.iteration}]
    if state.iteration is None or ack.iteration != state.iteration:
        events.append({"kind": "Ignored", "reason": "unexpected ack", "mid": ack.mid})
        return StepOutput(state, [], events)
    taken = dict(state.taken_members)
    if ack.taken:
        taken[ack.src] = ack.seq
    state = replace(
        state,
        resolved=state.resolved | {(ack.request_from, ack.src)},
        issued=state.issued | {(ack.src, k) for k in ack.extra_dependents},
        taken_members=tuple(sorted(taken.items())),
    )
    out = StepOutput(state, [], events)
    if state.issued <= state.resolved:
        out = _merge(out, _commit(state))
    return out


def _commit(state: ProcessState) -> StepOutput:
    it = state.iteration
    minimum_set = tuple(m for m, _ in state.taken_members)
    seqs = state.taken_members
    outbound = [
        (k, Commit(src=state.node, dst=k, initiator=state.node, iteration=it, minimum_set=minimum_set, seqs=seqs))
        for k in state.members
        if k != state.node
    ]
    state = replace(state, iteration=None, issued=frozenset(), resolved=frozenset(), taken_members=())
    applied = _apply_commit(state, it, minimum_set, seqs)
    committed = dict(seqs)
    applied.new_state = replace(
        applied.new_state,
        known_rows=tuple(r for r in applied.new_state.known_rows
                         if r[0] not in committed or r[1] > committed[r[0]]),
    )
    for ev in applied.events:
        if ev["kind"] == "CheckpointPromoted":
            ev["minimum_set"] = list(minimum_set)
    return StepOutput(applied.new_state, outbound, applied.events)


def _apply_commit(state: ProcessState, it: str, minimum_set, seqs) -> StepOutput:
    events: list[dict] = []
    committed = list(state.committed_seq)
    for member, seq in seqs:
        committed[member - 1] = max(committed[member - 1], seq)
    state = replace(state, committed_seq=tuple(committed), finished=state.finished | {it})
    pending = state.pending
    if state.node in minimum_set:
        if pending is None or pending.kind != TENTATIVE or pending.iteration != it:
            raise ProtocolError(f"node {state.node} is in the minimum set of {it} without a tentative checkpoint")
        state, ev = _promote(state, pending, PERMANENT, it)
        events.append(ev)
    elif pending is not None and pending.iteration == it:
        if pending.kind == TENTATIVE:
            raise ProtocolError(f"node {state.node} holds a tentative checkpoint for {it} but was left out")
        state, ev = _discard(state, pending)
        events.append(ev)
    if state.c_iter == it:
        state = replace(state, c_state=False, c_iter=None)
    return StepOutput(state, [], events)


def recv_commit(state: ProcessState, c: Commit) -> StepOutput:
    head = {"kind": "Process", "mid": c.mid, "src": c.src, "type": "Commit", "iteration": c.iteration}
    out = _apply_commit(state, c.iteration, c.minimum_set, c.seqs)
    out.events.insert(0, head)
    return out


def _apply_abort(state: ProcessState, it: str) -> StepOutput:
    events: list[dict] = []
    state = replace(state, finished=state.finished | {it})
    pending = state.pending
    if pending is not None and pending.iteration == it:
        state, ev = _discard(state, pending)
        events.append(ev)
    if state.c_iter == it:
        state = replace(state, c_state=False, c_iter=None)
    return StepOutput(state, [], events)


def recv_abort(state: ProcessState, a: Abort) -> StepOutput:
    out = _apply_abort(state, a.iteration)
    out.events.insert(0, {"kind": "Process", "mid": a.mid, "src": a.src, "type": "Abort", "iteration": a.iteration})
    return out


def abort_iteration(state: ProcessState) -> StepOutput:
    """Initiator gives up on its live iteration and tells every member."""
    if state.iteration is None:
        raise ProtocolError(f"node {state.node} has no iteration to abort")
    it = state.iteration
    outbound = [
        (k, Abort(src=state.node, dst=k, initiator=state.node, iteration=it))
        for k in state.members
        if k != state.node
    ]
    state = replace(state, iteration=None, issued=frozenset(), resolved=frozenset(), taken_members=())
    out = _apply_abort(state, it)
    return StepOutput(out.new_state, outbound, out.events)


def receive(state: ProcessState, m) -> StepOutput:
    if isinstance(m, AppMessage):
        return recv_app_message(state, m)
    if isinstance(m, Request):
        return recv_checkpoint_request(state, m)
    if isinstance(m, Ack):
        return recv_ack(state, m)
    if isinstance(m, Commit):
        return recv_commit(state, m)
    if isinstance(m, Abort):
        return recv_abort(state, m)
    raise ProtocolError(f"unknown message {m!r}")


def restore_last_permanent(state: ProcessState) -> ProcessState:
    """State right after the latest permanent checkpoint, or the initial state.

    csn keeps its current value so that peers' csn tables stay valid.
    """
    perms = [c for c in state.checkpoints if c.kind == PERMANENT]
    base = init_process(state.node, state.n, head=state.head, members=state.members, mode=state.mode)
    if not perms:
        return replace(base, csn=state.csn, finished=state.finished, committed_seq=state.committed_seq)
    last = perms[-1]
    keep = state.checkpoints[: state.checkpoints.index(last) + 1]
    return replace(
        base,
        csn=state.csn,
        known_csn=last.known_csn,
        committed_seq=state.committed_seq,
        app_state=last.app_state,
        checkpoints=keep,
        finished=state.finished,
    )
