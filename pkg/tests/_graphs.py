"""Shared graph builders for the test suite."""

from __future__ import annotations

import numpy as np

from tracerank.graph import PaymentEdge, PaymentGraph, aggregate_flows, normalize
from tracerank.solver import SeedVector

T0 = 1_700_000_000
DAY = 86400


def fig1_graph(value: float = 10.0) -> PaymentGraph:
    """Two payers each paying two services the same amount at the same time."""
    edges = [
        PaymentEdge(p, s, value, T0)
        for p in ("a", "b")
        for s in ("x", "y")
    ]
    return PaymentGraph(("a", "b", "x", "y"), tuple(sorted(edges)))


FIG1_SEEDS = SeedVector({"a": 0.9, "b": 0.1})


def fig1_transition():
    return normalize(aggregate_flows(fig1_graph(), 0.01))


def random_payment_graph(
    rng: np.random.Generator,
    max_nodes: int = 50,
    max_edges: int = 300,
    zero_value_prob: float = 0.05,
) -> tuple[PaymentGraph, SeedVector]:
    n = int(rng.integers(2, max_nodes + 1))
    m = int(rng.integers(0, max_edges + 1))
    addrs = [f"0x{k:04x}" for k in range(n)]
    edges = []
    for _ in range(m):
        j, i = (int(v) for v in rng.integers(0, n, 2))
        if i == j:
            continue
        value = 0.0 if rng.random() < zero_value_prob else float(rng.uniform(0.0, 1000.0))
        edges.append(PaymentEdge(addrs[j], addrs[i], value, T0 + int(rng.integers(0, 365 * DAY))))
    graph = PaymentGraph(tuple(addrs), tuple(sorted(edges)))
    seeds = SeedVector({a: float(rng.random()) for a in addrs})
    return graph, seeds
