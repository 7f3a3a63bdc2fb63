"""Deterministic discrete-event simulator for the checkpointing protocol.

Scenario documents are JSON::

    {"n": 3, "edges": [[1, 2], [2, 3]], "seed": 0, "default_latency": 1,
     "events": [{"at": 0, "kind": "SendApp", "from": 1, "to": 2, "payload": "x"},
                {"at": 4, "kind": "Initiate", "node": 2}]}

Traces are JSON lines, one :class:`TraceEntry` per line.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field, replace
from typing import Any

from . import protocol as P
from .topology import (
    AdHocGraph,
    ClusterAssignment,
    TopologyError,
    build_graph,
    classify_gateways,
    elect_clusterheads,
    reelect_after_head_failure,  # noqa: F401
    shortest_path,
)

EVENT_FIELDS = {
    "SendApp": ("from", "to"),
    "Initiate": ("node",),
    "Abort": ("node",),
    "BusyWindow": ("node", "duration"),
    "Disconnect": ("node", "until"),
    "Fail": ("node",),
}

SEND_KIND = {
    "AppMessage": "Send",
    "PrimaryRequest": "RequestSent",
    "SecondaryRequest": "RequestSent",
    "PropagatedRequest": "RequestSent",
    "Ack": "AckSent",
    "Commit": "CommitSent",
    "Abort": "AbortSent",
}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    at: int
    kind: str
    args: dict

    def to_dict(self) -> dict:
        return {"at": self.at, "kind": self.kind, **self.args}


@dataclass
class ScenarioConfig:
    graph: AdHocGraph
    seed: int = 0
    default_latency: int = 1
    per_link_latency: dict = field(default_factory=dict)
    jitter: int = 0
    events: list = field(default_factory=list)

    def to_dict(self) -> dict:
        doc: dict[str, Any] = {
            **self.graph.to_dict(),
            "seed": self.seed,
            "default_latency": self.default_latency,
            "events": [e.to_dict() for e in self.events],
        }
        if self.per_link_latency:
            doc["per_link_latency"] = [[a, b, lat] for (a, b), lat in sorted(self.per_link_latency.items())]
        if self.jitter:
            doc["jitter"] = self.jitter
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]


def _int(value, where: str, minimum: int = 0) -> int:
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        raise ScenarioError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def load_scenario(text: str | dict) -> ScenarioConfig:
    if isinstance(text, dict):
        doc = text
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    if "n" not in doc:
        raise ScenarioError("missing field 'n'")
    try:
        graph = build_graph(doc["n"], [tuple(e) for e in doc.get("edges", [])])
    except (TopologyError, TypeError) as exc:
        raise ScenarioError(f"edges: {exc}") from None
    links = {}
    for i, item in enumerate(doc.get("per_link_latency", [])):
        try:
            a, b, lat = item
        except (TypeError, ValueError):
            raise ScenarioError(f"per_link_latency[{i}]: expected [a, b, latency]") from None
        if (min(a, b), max(a, b)) not in graph.edges:
            raise ScenarioError(f"per_link_latency[{i}]: ({a}, {b}) is not an edge")
        links[(min(a, b), max(a, b))] = _int(lat, f"per_link_latency[{i}]", 1)
    events = []
    for i, raw in enumerate(doc.get("events", [])):
        where = f"events[{i}]"
        if not isinstance(raw, dict):
            raise ScenarioError(f"{where}: expected an object")
        kind = raw.get("kind")
        if kind not in EVENT_FIELDS:
            raise ScenarioError(f"{where}.kind: unknown event kind {kind!r}")
        at = _int(raw.get("at"), f"{where}.at")
        args = {k: v for k, v in raw.items() if k not in ("at", "kind")}
        for name in EVENT_FIELDS[kind]:
            if name not in args:
                raise ScenarioError(f"{where}: missing field {name!r}")
        for name in ("from", "to", "node"):
            if name in args:
                x = args[name]
                if not isinstance(x, int) or isinstance(x, bool) or not 1 <= x <= graph.n:
                    raise ScenarioError(f"{where}.{name}: unknown node {x!r}")
        if kind == "SendApp" and args["from"] == args["to"]:
            raise ScenarioError(f"{where}: a node cannot send to itself")
        if kind == "BusyWindow":
            _int(args["duration"], f"{where}.duration", 1)
        if kind == "Disconnect" and _int(args["until"], f"{where}.until") <= at:
            raise ScenarioError(f"{where}.until: must be later than 'at'")
        if "latency" in args:
            _int(args["latency"], f"{where}.latency", 1)
        events.append(ScenarioEvent(at, kind, args))
    return ScenarioConfig(
        graph=graph,
        seed=_int(doc.get("seed", 0), "seed"),
        default_latency=_int(doc.get("default_latency", 1), "default_latency", 1),
        per_link_latency=links,
        jitter=_int(doc.get("jitter", 0), "jitter"),
        events=events,
    )


# -- trace ------------------------------------------------------------------


@dataclass(frozen=True)
class TraceEntry:
    seq: int
    time: int
    node: int
    kind: str
    detail: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "time": self.time, "node": self.node, "kind": self.kind, "detail": self.detail}


@dataclass
class Trace:
    scenario_hash: str
    entries: list
    digests: dict = field(default_factory=dict)
    states: dict = field(default_factory=dict, repr=False)

    def dumps(self) -> str:
        return "".join(json.dumps(e.to_dict(), sort_keys=True) + "\n" for e in self.entries)

    def of_kind(self, *kinds: str) -> list:
        return [e for e in self.entries if e.kind in kinds]


def parse_trace(text: str) -> Trace:
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
            entries.append(TraceEntry(raw["seq"], raw["time"], raw["node"], raw["kind"], raw.get("detail", {})))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ScenarioError(f"trace line {lineno}: {exc}") from None
    setup = [e for e in entries if e.kind == "Setup"]
    scenario_hash = setup[0].detail.get("scenario_hash", "") if setup else ""
    digests = {e.node: e.detail["digest"] for e in entries if e.kind == "Final"}
    return Trace(scenario_hash, entries, digests)


def message_detail(m) -> dict:
    d: dict[str, Any] = {"mid": m.mid, "type": type(m).__name__, "src": m.src, "dst": m.dst}
    if isinstance(m, P.AppMessage):
        d.update(payload=m.payload, pb_own_csn=m.pb_own_csn, pb_c_state=m.pb_c_state,
                 pb_iteration=m.pb_iteration, intra=m.intra)
        if m.pb_dv is not None:
            d["pb_dv"] = list(m.pb_dv)
    elif isinstance(m, P.Request):
        d.update(iteration=m.iteration, known_minset=sorted(m.known_minset))
    elif isinstance(m, P.Ack):
        d.update(iteration=m.iteration, request_from=m.request_from, taken=m.taken, seq=m.seq,
                 extra_dependents=list(m.extra_dependents))
    elif isinstance(m, P.Commit):
        d.update(iteration=m.iteration, minimum_set=list(m.minimum_set), seqs=[list(s) for s in m.seqs])
    elif isinstance(m, P.Abort):
        d.update(iteration=m.iteration)
    return d


# -- simulator --------------------------------------------------------------


class Simulator:
    """Single event loop over one scenario.

    ``block_during_cstate`` is a deliberately broken variant used to show that
    the non-blocking check catches protocols that hold application messages.
    """

    def __init__(self, config: ScenarioConfig, mode: str = P.MINIMUM, block_during_cstate: bool = False):
        self.config = config
        self.mode = mode
        self.block_during_cstate = block_during_cstate
        self.rng = random.Random(config.seed)
        g = config.graph
        self.assignment: ClusterAssignment = classify_gateways(g, elect_clusterheads(g))
        self.states: dict[int, P.ProcessState] = {}
        for x in g.nodes:
            head = self.assignment.cluster_of[x]
            self.states[x] = P.init_process(x, g.n, head=head, members=self.assignment.members(head), mode=mode)
        self.entries: list[TraceEntry] = []
        self.now = 0
        self._heap: list = []
        self._order = 0
        self._mids = {"app": 0, "ctl": 0}
        self._fifo: dict[tuple[int, int], int] = {}
        self.busy_until = {x: 0 for x in g.nodes}
        self.away_until = {x: 0 for x in g.nodes}
        self.deferred: dict[int, list] = {x: [] for x in g.nodes}
        self.held: dict[int, list] = {x: [] for x in g.nodes}

    # bookkeeping
    def _log(self, node: int, kind: str, **detail) -> None:
        self.entries.append(TraceEntry(len(self.entries) + 1, self.now, node, kind, detail))

    def _push(self, time: int, action: tuple) -> None:
        self._order += 1
        heapq.heappush(self._heap, (time, self._order, action))

    def _link(self, a: int, b: int) -> int:
        return self.config.per_link_latency.get((min(a, b), max(a, b)), self.config.default_latency)

    def _route(self, src: int, dst: int) -> list[int] | None:
        cof = self.assignment.cluster_of
        if cof[src] == cof[dst]:
            return [src, dst]
        core = shortest_path(self.config.graph, cof[src], cof[dst])
        if core is None:
            return None
        path = [src] + core + [dst]
        return [x for i, x in enumerate(path) if i == 0 or x != path[i - 1]]

    def _latency(self, path: list[int]) -> int:
        g = self.config.graph
        total = 0
        for a, b in zip(path, path[1:]):
            total += self._link(a, b) if b in g.adjacency[a] else self.config.default_latency
        return total

    # transport
    def _emit(self, node: int, out: P.StepOutput, override: int | None = None) -> None:
        self.states[node] = out.new_state
        for ev in out.events:
            ev = dict(ev)
            kind = ev.pop("kind")
            self._log(node, kind, **ev)
        for dst, msg in out.outbound:
            self._send(node, dst, msg, override)

    def _send(self, node: int, dst: int, msg, override: int | None) -> None:
        key = "app" if isinstance(msg, P.AppMessage) else "ctl"
        self._mids[key] += 1
        mid = f"{'m' if key == 'app' else 'c'}{self._mids[key]}"
        msg = replace(msg, mid=mid)
        detail = message_detail(msg)
        path = self._route(node, dst)
        if path is None:
            self._log(node, "Error", reason="unreachable destination", mid=mid, dst=dst)
            return
        kind = SEND_KIND[detail["type"]]
        self._log(node, kind, **detail, hops=len(path) - 1)
        if override is not None:
            self._push(self.now + override, ("deliver", msg))
            return
        delay = self._latency(path)
        if key == "app" and self.config.jitter:
            delay += self.rng.randint(0, self.config.jitter)
        arrival = max(self.now + delay, self._fifo.get((node, dst), 0))
        self._fifo[(node, dst)] = arrival
        self._push(arrival, ("deliver", msg))

    def _available(self, node: int) -> bool:
        return self.now >= self.busy_until[node] and self.now >= self.away_until[node]

    def _deliver(self, msg) -> None:
        d = msg.dst
        if self.now < self.away_until[d]:
            self.deferred[d].append(("deliver", msg))
            return
        detail = message_detail(msg)
        detail.pop("dst")
        self._log(d, "Deliver", **detail)
        if not self._available(d) or self.deferred[d]:
            self.deferred[d].append(("process", msg))
        else:
            self._process(msg)

    def _process(self, msg) -> None:
        d = msg.dst
        if self.block_during_cstate and isinstance(msg, P.AppMessage) and self.states[d].c_state:
            self.held[d].append(msg)
            return
        try:
            out = P.receive(self.states[d], msg)
        except P.ProtocolError as exc:
            self._log(d, "Error", reason=str(exc), mid=msg.mid)
            return
        self._emit(d, out)
        if self.held[d] and not self.states[d].c_state:
            held, self.held[d] = self.held[d], []
            for m in held:
                self._process(m)

    def _local(self, ev: ScenarioEvent) -> None:
        a = ev.args
        if ev.kind == "SendApp":
            src = a["from"]
            try:
                out = P.send_app_message(self.states[src], a["to"], a.get("payload"))
            except P.ProtocolError as exc:
                self._log(src, "Ignored", reason=str(exc))
                return
            self._emit(src, out, a.get("latency"))
        elif ev.kind in ("Initiate", "Abort"):
            node = a["node"]
            fn = P.initiate_checkpoint if ev.kind == "Initiate" else P.abort_iteration
            try:
                out = fn(self.states[node])
            except P.ProtocolError as exc:
                self._log(node, "Ignored", reason=str(exc), event=ev.kind)
                return
            self._emit(node, out)

    def _drain(self, node: int) -> None:
        while self.deferred[node] and self._available(node):
            what, item = self.deferred[node].pop(0)
            if what == "deliver":
                detail = message_detail(item)
                detail.pop("dst")
                self._log(node, "Deliver", buffered=True, **detail)
                self._process(item)
            elif what == "process":
                self._process(item)
            else:
                self._local(item)

    def _scenario(self, ev: ScenarioEvent) -> None:
        a = ev.args
        if ev.kind == "BusyWindow":
            node = a["node"]
            self.busy_until[node] = max(self.busy_until[node], self.now + a["duration"])
            self._log(node, "Busy", until=self.busy_until[node])
            self._push(self.busy_until[node], ("wake", node))
        elif ev.kind == "Disconnect":
            node = a["node"]
            self.away_until[node] = max(self.away_until[node], a["until"])
            self._log(node, "Disconnect", until=self.away_until[node],
                      buffered_at=self.assignment.cluster_of[node])
            self._push(self.away_until[node], ("wake", node))
        elif ev.kind == "Fail":
            node = a["node"]
            restored = P.restore_last_permanent(self.states[node])
            self.states[node] = restored
            perms = [c.seq for c in restored.checkpoints if c.kind == P.PERMANENT]
            self._log(node, "Restored", seq=perms[-1] if perms else None, app_state=list(restored.app_state))
        else:
            node = a["from"] if ev.kind == "SendApp" else a["node"]
            if not self._available(node) or self.deferred[node]:
                self.deferred[node].append(("local", ev))
            else:
                self._local(ev)

    def run(self) -> Trace:
        scenario_hash = self.config.hash()
        for x in self.config.graph.nodes:
            head = self.assignment.cluster_of[x]
            self._log(x, "Setup", role=self.assignment.role[x], cluster_of=head,
                      members=self.assignment.members(head), n=self.config.graph.n,
                      mode=self.mode, scenario_hash=scenario_hash)
        for ev in sorted(self.config.events, key=lambda e: e.at):
            self._push(ev.at, ("event", ev))
        while self._heap:
            time, _, action = heapq.heappop(self._heap)
            self.now = time
            if action[0] == "event":
                self._scenario(action[1])
            elif action[0] == "deliver":
                self._deliver(action[1])
            else:
                self._drain(action[1])
        for x in self.config.graph.nodes:
            st = self.states[x]
            self._log(x, "Final", digest=st.digest(), csn=st.csn)
        return Trace(scenario_hash, self.entries, {x: s.digest() for x, s in self.states.items()},
                     dict(self.states))


def run(config: ScenarioConfig, mode: str = P.MINIMUM, **kwargs) -> Trace:
    return Simulator(config, mode=mode, **kwargs).run()


def restore_last_permanent(trace: Trace, node: int) -> P.ProcessState:
    if node not in trace.states:
        raise ValueError(f"trace carries no live state for node {node}; rerun the scenario")
    return P.restore_last_permanent(trace.states[node])
