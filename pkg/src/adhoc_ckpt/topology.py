"""Ad hoc network graph, weight-based clusterhead election and cluster validation."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

CLUSTER_HEAD = "ClusterHead"
ORDINARY = "Ordinary"
GATEWAY = "Gateway"


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class AdHocGraph:
    n: int
    edges: frozenset  # of (a, b) with a < b
    adjacency: dict = field(compare=False, repr=False)

    @property
    def nodes(self) -> range:
        return range(1, self.n + 1)

    def neighbors(self, x: int) -> frozenset:
        self._check(x)
        return self.adjacency[x]

    def _check(self, x: int) -> None:
        if not isinstance(x, int) or not 1 <= x <= self.n:
            raise TopologyError(f"unknown node {x!r}")

    def is_connected(self) -> bool:
        return len(bfs_distances(self, 1)) == self.n

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [list(e) for e in sorted(self.edges)]}


def build_graph(n: int, edges: Iterable) -> AdHocGraph:
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise TopologyError(f"node count must be a positive integer, got {n!r}")
    seen: set[tuple[int, int]] = set()
    adjacency: dict[int, set[int]] = {x: set() for x in range(1, n + 1)}
    for pair in edges:
        try:
            a, b = pair
        except (TypeError, ValueError):
            raise TopologyError(f"edge must be a pair, got {pair!r}") from None
        for x in (a, b):
            if not isinstance(x, int) or isinstance(x, bool) or not 1 <= x <= n:
                raise TopologyError(f"edge {pair!r}: node id {x!r} outside 1..{n}")
        if a == b:
            raise TopologyError(f"self-loop on node {a}")
        key = (min(a, b), max(a, b))
        if key in seen:
            raise TopologyError(f"duplicate edge {key}")
        seen.add(key)
        adjacency[a].add(b)
        adjacency[b].add(a)
    return AdHocGraph(n, frozenset(seen), {x: frozenset(v) for x, v in adjacency.items()})


def degree(g: AdHocGraph, x: int) -> int:
    return len(g.neighbors(x))


def weight(g: AdHocGraph, x: int) -> Fraction:
    """Sum of the neighbours' degrees plus ``x / (n + 1)``, as an exact rational.

    The fractional part is distinct for every id in 1..n, so no two nodes tie.
    """
    return sum((degree(g, y) for y in g.neighbors(x)), Fraction(0)) + Fraction(x, g.n + 1)


def bfs_distances(g: AdHocGraph, source: int, allowed: frozenset | None = None) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in sorted(g.adjacency[u]):
            if v not in dist and (allowed is None or v in allowed):
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path(g: AdHocGraph, src: int, dst: int) -> list[int] | None:
    prev = {src: None}
    queue = deque([src])
    while queue:
        u = queue.popleft()
        if u == dst:
            break
        for v in sorted(g.adjacency[u]):
            if v not in prev:
                prev[v] = u
                queue.append(v)
    if dst not in prev:
        return None
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


@dataclass(frozen=True)
class ClusterAssignment:
    role: dict
    cluster_of: dict

    def heads(self) -> list[int]:
        return sorted(x for x, r in self.role.items() if r == CLUSTER_HEAD)

    def members(self, head: int) -> list[int]:
        return sorted(x for x, h in self.cluster_of.items() if h == head)


def _greedy(g: AdHocGraph, order: list[int], role: dict, cluster_of: dict, weights: dict) -> None:
    for x in order:
        heads = [y for y in g.adjacency[x] if role.get(y) == CLUSTER_HEAD]
        if heads:
            role[x] = ORDINARY
            cluster_of[x] = max(heads, key=weights.__getitem__)
        else:
            role[x] = CLUSTER_HEAD
            cluster_of[x] = x


def elect_clusterheads(g: AdHocGraph) -> ClusterAssignment:
    """Visit nodes by decreasing weight; a node with no head among its
    neighbours becomes a head, otherwise it joins its heaviest neighbouring head."""
    weights = {x: weight(g, x) for x in g.nodes}
    order = sorted(g.nodes, key=weights.__getitem__, reverse=True)
    role: dict[int, str] = {}
    cluster_of: dict[int, int] = {}
    _greedy(g, order, role, cluster_of, weights)
    return ClusterAssignment(role, cluster_of)


def classify_gateways(g: AdHocGraph, a: ClusterAssignment) -> ClusterAssignment:
    role = dict(a.role)
    for x, r in a.role.items():
        if r == CLUSTER_HEAD:
            continue
        foreign = any(y in a.cluster_of and a.cluster_of[y] != a.cluster_of[x] for y in g.adjacency[x])
        role[x] = GATEWAY if foreign else ORDINARY
    return ClusterAssignment(role, dict(a.cluster_of))


@dataclass
class PropertyReport:
    dominance: bool
    independence: bool
    two_hop: bool
    dominance_witnesses: list = field(default_factory=list)
    independence_witnesses: list = field(default_factory=list)
    two_hop_witnesses: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.dominance and self.independence and self.two_hop


def validate_cluster_properties(g: AdHocGraph, a: ClusterAssignment) -> PropertyReport:
    """Check dominance, independence and two-hop over the nodes present in ``a``.

    Nodes absent from the assignment (e.g. a failed head) are treated as removed
    from the graph.
    """
    present = frozenset(a.role)
    dom, ind, hop = [], [], []
    for x in sorted(present):
        if a.role[x] == CLUSTER_HEAD:
            if a.cluster_of.get(x) != x:
                dom.append(x)
            continue
        head = a.cluster_of.get(x)
        if head not in present or a.role.get(head) != CLUSTER_HEAD or head not in g.adjacency[x]:
            dom.append(x)
    for u, v in sorted(g.edges):
        if u in present and v in present and a.role[u] == a.role[v] == CLUSTER_HEAD:
            ind.append((u, v))
    for head in sorted({h for h in a.cluster_of.values() if h in present}):
        members = [x for x in sorted(present) if a.cluster_of.get(x) == head]
        for i, u in enumerate(members):
            dist = bfs_distances(g, u, present)
            for v in members[i + 1:]:
                if dist.get(v, 3) > 2:
                    hop.append((u, v))
    return PropertyReport(not dom, not ind, not hop, dom, ind, hop)


def reelect_after_head_failure(g: AdHocGraph, a: ClusterAssignment, failed: int) -> ClusterAssignment:
    """Drop ``failed`` and re-cluster its orphaned members; other clusters are kept."""
    if a.role.get(failed) != CLUSTER_HEAD:
        raise TopologyError(f"node {failed} is not a clusterhead")
    alive = frozenset(a.role) - {failed}

    def w(x: int) -> Fraction:
        nbrs = [y for y in g.adjacency[x] if y in alive]
        return sum(
            (sum(1 for z in g.adjacency[y] if z in alive) for y in nbrs), Fraction(0)
        ) + Fraction(x, g.n + 1)

    orphans = sorted(x for x in alive if a.cluster_of[x] == failed)
    role = {x: a.role[x] for x in alive if x not in orphans}
    cluster_of = {x: a.cluster_of[x] for x in alive if x not in orphans}
    weights = {x: w(x) for x in alive}
    order = sorted(orphans, key=weights.__getitem__, reverse=True)
    _greedy(g, order, role, cluster_of, weights)
    return classify_gateways(g, ClusterAssignment(role, cluster_of))
