"""Minimum-process, non-blocking coordinated checkpointing for clustered ad hoc networks.

Submodules: ``topology`` (graph, weights, clusterhead election), ``protocol``
(pure per-process transitions), ``netsim`` (deterministic event simulator and
traces), ``verify`` (trace oracles), ``metrics`` and ``cli``.
"""

from .netsim import ScenarioConfig, Trace, load_scenario, parse_trace, run
from .topology import build_graph, elect_clusterheads, validate_cluster_properties, weight
from .verify import find_orphans, oracle_minimum_set, snapshot_of_iteration, verify_trace

__all__ = [
    "ScenarioConfig",
    "Trace",
    "build_graph",
    "elect_clusterheads",
    "find_orphans",
    "load_scenario",
    "oracle_minimum_set",
    "parse_trace",
    "run",
    "snapshot_of_iteration",
    "validate_cluster_properties",
    "verify_trace",
    "weight",
]
