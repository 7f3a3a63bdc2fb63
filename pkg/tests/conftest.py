import random
import time
from dataclasses import dataclass, field

import pytest

from adhoc_ckpt.corpus import random_scenario
from adhoc_ckpt.netsim import run
from adhoc_ckpt.topology import build_graph

CORPUS_SIZE = 1000
_ACCEPTANCE: list[str] = []


def random_connected_graph(rng: random.Random, n: int, extra: float | None = None):
    """Random spanning tree plus a random number of extra edges."""
    edges = set()
    order = list(range(1, n + 1))
    rng.shuffle(order)
    for i in range(1, n):
        a, b = order[i], order[rng.randrange(i)]
        edges.add((min(a, b), max(a, b)))
    density = rng.random() * 0.3 if extra is None else extra
    for a in range(1, n + 1):
        for b in range(a + 1, n + 1):
            if rng.random() < density:
                edges.add((a, b))
    return build_graph(n, sorted(edges))


@dataclass
class Corpus:
    configs: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    run_seconds: float = 0.0


@pytest.fixture(scope="session")
def corpus() -> Corpus:
    c = Corpus()
    t0 = time.perf_counter()
    for seed in range(CORPUS_SIZE):
        cfg = random_scenario(seed)
        c.configs.append(cfg)
        c.traces.append(run(cfg))
    c.run_seconds = time.perf_counter() - t0
    return c


@pytest.fixture
def acceptance():
    def record(criterion: int, ok: bool, detail: str) -> bool:
        _ACCEPTANCE.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
