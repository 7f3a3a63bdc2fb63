"""Built-in five-process worked example.

P2 heads a single cluster. An earlier round makes P3 checkpoint after it sent
m0, and m0 is slow, so when it lands P2 already knows it is covered and records
no dependency on P3. Before the main round, m1 (P1->P2), m2 (P4->P1) and m3
(P5->P4) give P2 -> P1 -> P4 -> P5. P2 requests P1 and P4 directly, because P1
reported its row on m1. After its tentative checkpoint P1 sends m4 to P3 and m5
to P4. P3 has sent nothing since its checkpoint and only advances its csn. P4
has sent, so it takes a mutable checkpoint before m5 and later promotes it and
forwards the request to P5. The link P2-P4 is slow so that m5 wins the race
with P2's request.
"""

from __future__ import annotations

import json

from .netsim import ScenarioConfig, load_scenario

FIG4_DOC = {
    "n": 5,
    "edges": [[1, 2], [1, 3], [1, 4], [2, 3], [2, 4], [2, 5]],
    "seed": 0,
    "default_latency": 1,
    "per_link_latency": [[2, 4, 4]],
    "events": [
        {"at": 0, "kind": "SendApp", "from": 3, "to": 2, "payload": "mA"},
        {"at": 2, "kind": "SendApp", "from": 3, "to": 2, "payload": "m0", "latency": 10},
        {"at": 2, "kind": "Initiate", "node": 2},
        {"at": 6, "kind": "SendApp", "from": 4, "to": 1, "payload": "m2"},
        {"at": 6, "kind": "SendApp", "from": 5, "to": 4, "payload": "m3"},
        {"at": 8, "kind": "SendApp", "from": 1, "to": 2, "payload": "m1"},
        {"at": 13, "kind": "Initiate", "node": 2},
        {"at": 15, "kind": "SendApp", "from": 1, "to": 3, "payload": "m4"},
        {"at": 15, "kind": "SendApp", "from": 1, "to": 4, "payload": "m5"},
    ],
}

FIG4_ITERATION = "2.2"


def fig4_text() -> str:
    return json.dumps(FIG4_DOC, indent=2)


def fig4_config() -> ScenarioConfig:
    return load_scenario(fig4_text())
