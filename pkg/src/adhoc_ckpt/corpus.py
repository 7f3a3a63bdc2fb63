"""Seeded random single-cluster scenarios used by the property and acceptance suites."""

from __future__ import annotations

import random

from .netsim import ScenarioConfig, load_scenario


def random_scenario_doc(seed: int, *, min_nodes: int = 3, max_nodes: int = 8, max_messages: int = 30,
                        horizon: int = 60) -> dict:
    """A star around node ``n`` (so ``n`` is the only head) with random traffic,
    one to three initiations by the head and a few busy windows."""
    rng = random.Random(seed)
    n = rng.randint(min_nodes, max_nodes)
    head = n
    events = []
    for _ in range(rng.randint(0, max_messages)):
        src, dst = rng.sample(range(1, n + 1), 2)
        events.append({"at": rng.randint(0, horizon), "kind": "SendApp", "from": src, "to": dst,
                       "payload": f"p{len(events)}"})
    for _ in range(rng.randint(1, 3)):
        events.append({"at": rng.randint(0, horizon), "kind": "Initiate", "node": head})
    for _ in range(rng.randint(0, 3)):
        events.append({"at": rng.randint(0, horizon), "kind": "BusyWindow", "node": rng.randint(1, n),
                       "duration": rng.randint(1, 6)})
    events.sort(key=lambda e: e["at"])
    return {
        "n": n,
        "edges": [[i, head] for i in range(1, n)],
        "seed": seed,
        "default_latency": 1,
        "jitter": rng.randint(0, 2),
        "events": events,
    }


def random_scenario(seed: int, **kwargs) -> ScenarioConfig:
    return load_scenario(random_scenario_doc(seed, **kwargs))
