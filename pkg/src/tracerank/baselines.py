"""Counterfactual rankings: inbound payment count, inbound USD volume, and
PageRank with uniform teleportation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import sparse

from .graph import DEFAULT_LAMBDA, PaymentGraph, aggregate_flows

Method = Literal["count", "volume", "pagerank"]


@dataclass(frozen=True)
class BaselineScore:
    method: Method
    addresses: tuple[str, ...]
    values: np.ndarray
    converged: bool = True
    iterations_used: int = 0

    @property
    def scores(self) -> dict[str, float]:
        return dict(zip(self.addresses, self.values.tolist()))

    def score(self, address: str) -> float:
        return self.scores.get(address, 0.0)


def count_rank(graph: PaymentGraph) -> BaselineScore:
    idx = graph.index
    counts = np.zeros(len(graph.nodes), dtype=np.int64)
    for e in graph.edges:
        counts[idx[e.payee]] += 1
    return BaselineScore("count", graph.nodes, counts)


def volume_rank(graph: PaymentGraph) -> BaselineScore:
    inbound: dict[str, list[float]] = defaultdict(list)
    for e in graph.edges:
        inbound[e.payee].append(e.value_usd)
    vol = np.array([math.fsum(inbound.get(a, ())) for a in graph.nodes], dtype=np.float64)
    return BaselineScore("volume", graph.nodes, vol)


def pagerank_unseeded(
    graph: PaymentGraph,
    damping: float = 0.85,
    tol: float = 1e-9,
    max_iter: int = 200,
    *,
    weighted: bool = True,
    lam: float = DEFAULT_LAMBDA,
    as_of: int | None = None,
    clamp_future: bool = False,
) -> BaselineScore:
    """Random-surfer PageRank following payments from payer to payee.

    Weighted mode splits each payer's mass in proportion to its decayed
    log-value out-flows; unweighted mode splits it evenly across distinct
    payees. Mass at addresses with no outgoing weight is spread uniformly.
    """
    if not (0.0 < damping < 1.0):
        raise ValueError(f"damping must lie in (0, 1), got {damping!r}")
    n = len(graph.nodes)
    if n == 0:
        raise ValueError("PageRank needs a nonempty node set")
    if weighted:
        flows = aggregate_flows(graph, lam, as_of, clamp_future=clamp_future)
        rows, cols, vals = flows.rows, flows.cols, flows.values()
    else:
        idx = graph.index
        pairs = sorted({(idx[e.payer], idx[e.payee]) for e in graph.edges})
        rows = np.array([p[0] for p in pairs], dtype=np.int64)
        cols = np.array([p[1] for p in pairs], dtype=np.int64)
        vals = np.ones(len(pairs))

    out = np.zeros(n)
    np.add.at(out, rows, vals)
    keep = vals > 0
    rows, cols, vals = rows[keep], cols[keep], vals[keep]
    # transition P[i, j]: probability of stepping j -> i
    p = sparse.csr_matrix((vals / out[rows], (cols, rows)), shape=(n, n))
    p.sort_indices()
    dangling = out <= 0

    x = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        lost = math.fsum(x[dangling].tolist())
        nxt = damping * (p @ x) + (damping * lost + (1.0 - damping)) / n
        nxt /= math.fsum(nxt.tolist())
        res = math.fsum(np.abs(nxt - x).tolist())
        x = nxt
        if res <= tol:
            return BaselineScore("pagerank", graph.nodes, x, True, it)
    return BaselineScore("pagerank", graph.nodes, x, False, max_iter)
