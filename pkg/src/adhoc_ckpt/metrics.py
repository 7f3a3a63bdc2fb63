"""Counts for comparing the minimum-process protocol with the all-process baseline."""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field

from . import protocol as P
from .netsim import ScenarioConfig, Trace, run
from .verify import check_nonblocking


class MetricsError(ValueError):
    pass


@dataclass
class IterationMetrics:
    iteration: str
    initiator: int
    committed: bool = False
    permanents: int = 0
    tentatives: int = 0
    mutables_promoted: int = 0
    minimum_set_size: int = 0
    cluster_size: int = 0


@dataclass
class MetricsReport:
    permanents: int = 0
    tentatives: int = 0
    mutables_taken: int = 0
    mutables_promoted: int = 0
    mutables_discarded: int = 0
    mutables_pending: int = 0
    control_messages: dict = field(default_factory=dict)
    app_messages: int = 0
    minimum_set_size: int = 0
    cluster_size: int = 0
    blocking_time: int = 0
    iterations: list = field(default_factory=list)

    @property
    def control_total(self) -> int:
        return sum(self.control_messages.values())

    def identities_hold(self) -> bool:
        mutable_ok = self.mutables_taken == self.mutables_promoted + self.mutables_discarded + self.mutables_pending
        return mutable_ok and self.minimum_set_size <= self.cluster_size

    def to_dict(self) -> dict:
        d = asdict(self)
        d["control_total"] = self.control_total
        return d


def summarize_metrics(trace: Trace) -> MetricsReport:
    if not trace.of_kind("Final"):
        raise MetricsError("trace is truncated: no Final entries")
    r = MetricsReport()
    control: Counter = Counter()
    cluster: dict[int, tuple] = {}
    its: dict[str, IterationMetrics] = {}
    mutables: set = set()

    def it_of(e) -> IterationMetrics | None:
        return its.get(e.detail.get("iteration"))

    for e in trace.entries:
        d = e.detail
        if e.kind == "Setup":
            cluster[e.node] = tuple(d.get("members", ()))
        elif e.kind == "Send":
            r.app_messages += 1
        elif e.kind in ("RequestSent", "AckSent", "CommitSent", "AbortSent"):
            control[d["type"]] += 1
        elif e.kind == "CheckpointTaken":
            if d.get("initiator"):
                its[d["iteration"]] = IterationMetrics(d["iteration"], e.node,
                                                       cluster_size=len(cluster.get(e.node, ())))
            if d["ckpt_kind"] == P.MUTABLE:
                r.mutables_taken += 1
                mutables.add((e.node, d["seq"]))
            elif d["ckpt_kind"] == P.TENTATIVE:
                r.tentatives += 1
                if (m := it_of(e)) is not None:
                    m.tentatives += 1
        elif e.kind == "CheckpointPromoted":
            m = it_of(e)
            if d["to"] == P.TENTATIVE and d["from"] == P.MUTABLE:
                r.mutables_promoted += 1
                mutables.discard((e.node, d["seq"]))
                if m is not None:
                    m.mutables_promoted += 1
            elif d["to"] == P.PERMANENT:
                r.permanents += 1
                if m is not None:
                    m.permanents += 1
                    if "minimum_set" in d:
                        m.committed = True
                        m.minimum_set_size = len(d["minimum_set"])
        elif e.kind == "CheckpointDiscarded" and d["ckpt_kind"] == P.MUTABLE:
            r.mutables_discarded += 1
            mutables.discard((e.node, d["seq"]))
    r.mutables_pending = len(mutables)
    r.control_messages = dict(sorted(control.items()))
    r.iterations = list(its.values())
    r.minimum_set_size = max((m.minimum_set_size for m in its.values()), default=0)
    r.cluster_size = max((m.cluster_size for m in its.values()), default=0)
    r.blocking_time = sum(v.get("delay", 0) - v.get("allowed", 0) for v in check_nonblocking(trace))
    return r


def run_all_process_baseline(config: ScenarioConfig) -> Trace:
    """Same scenario, but every initiation checkpoints the whole cluster."""
    return run(config, mode=P.ALL_PROCESS)
