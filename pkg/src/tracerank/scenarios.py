"""Deterministic adversarial economies.

The spam scenario pits an airdrop-bait service paid once by thousands of
fresh wallets against a niche service paid by a few seeded traders.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .baselines import count_rank, pagerank_unseeded, volume_rank
from .graph import DEFAULT_LAMBDA, PaymentEdge, PaymentGraph, aggregate_flows, format_timestamp, normalize
from .retrieval import ServiceIndex
from .solver import SeedVector, SolverConfig, tracerank_power

DAY = 86400
SCENARIO_END = 1_748_736_000  # 2025-06-01T00:00:00Z

SPAM_DESCRIPTION = (
    "Send $1, receive 1M airdrop tokens. Instant giveaway claim, free token "
    "rewards for every wallet."
)
LEGIT_DESCRIPTION = (
    "Background check service for counterparties: identity verification, "
    "sanctions screening and criminal record checks for traders and protocols."
)


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    rng_seed: int
    parameters: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    spec: ScenarioSpec
    graph: PaymentGraph
    seeds: SeedVector
    profiles: tuple[dict[str, Any], ...]
    service_a: str
    service_b: str

    def index(self, dim: int = 256) -> ServiceIndex:
        return ServiceIndex.from_records(self.profiles, dim)


def _address(rng: np.random.Generator) -> str:
    return "0x" + rng.bytes(20).hex()


def _split_cents(total_cents: int, weights: np.ndarray) -> list[int]:
    """Largest-remainder split of an integer total in proportion to weights."""
    share = weights / weights.sum() * total_cents
    base = np.floor(share).astype(np.int64)
    short = total_cents - int(base.sum())
    order = np.argsort(-(share - base), kind="stable")
    base[order[:short]] += 1
    return base.tolist()


def scenario_spam(
    n_spam_payers: int = 10_000,
    spam_value: float = 1.0,
    n_legit_payers: int = 50,
    legit_total: float = 5_000.0,
    legit_seed: float = 0.9,
    rng_seed: int = 0,
    *,
    spam_seed: float = 0.0,
    spam_repeat: int = 1,
    legit_spread: float = 0.0,
    legit_window_days: int = 30,
    spam_window_days: int = 3,
) -> Scenario:
    """Generate the spam-versus-legitimate service economy.

    Each spam wallet pays Service A ``spam_repeat`` times. Service B's
    ``legit_total`` is split across its payers in whole cents, evenly when
    ``legit_spread`` is 0 and with weights drawn from
    ``1 + legit_spread * U(-1, 1)`` otherwise. Legit payments fall uniformly
    in the last ``legit_window_days`` days, spam in the last
    ``spam_window_days``.
    """
    if n_spam_payers < 0 or n_legit_payers < 0 or spam_repeat < 1:
        raise ValueError("payer counts must be >= 0 and spam_repeat >= 1")
    if not 0.0 <= legit_spread < 1.0:
        raise ValueError("legit_spread must lie in [0, 1)")
    params = dict(
        n_spam_payers=n_spam_payers,
        spam_value=spam_value,
        n_legit_payers=n_legit_payers,
        legit_total=legit_total,
        legit_seed=legit_seed,
        spam_seed=spam_seed,
        spam_repeat=spam_repeat,
        legit_spread=legit_spread,
        legit_window_days=legit_window_days,
        spam_window_days=spam_window_days,
    )
    rng = np.random.default_rng(rng_seed)
    service_a = _address(rng)
    service_b = _address(rng)
    spam_wallets = [_address(rng) for _ in range(n_spam_payers)]
    legit_wallets = [_address(rng) for _ in range(n_legit_payers)]

    edges: list[PaymentEdge] = []
    spam_lo = SCENARIO_END - spam_window_days * DAY
    for w in spam_wallets:
        for ts in rng.integers(spam_lo, SCENARIO_END, size=spam_repeat, endpoint=True):
            edges.append(PaymentEdge(w, service_a, float(spam_value), int(ts)))

    if n_legit_payers:
        weights = 1.0 + legit_spread * rng.uniform(-1.0, 1.0, size=n_legit_payers)
        cents = _split_cents(round(legit_total * 100), weights)
        legit_lo = SCENARIO_END - legit_window_days * DAY
        stamps = rng.integers(legit_lo, SCENARIO_END, size=n_legit_payers, endpoint=True)
        for w, c, ts in zip(legit_wallets, cents, stamps.tolist()):
            edges.append(PaymentEdge(w, service_b, c / 100, int(ts)))

    seeds = {w: legit_seed for w in legit_wallets if legit_seed > 0}
    if spam_seed > 0:
        seeds.update({w: spam_seed for w in spam_wallets})

    nodes = {service_a, service_b, *spam_wallets, *legit_wallets}
    graph = PaymentGraph(nodes=tuple(sorted(nodes)), edges=tuple(sorted(edges)))
    profiles = (
        {"address": service_a, "description": SPAM_DESCRIPTION, "tags": ["airdrop"], "chain": "base"},
        {"address": service_b, "description": LEGIT_DESCRIPTION, "tags": ["compliance"], "chain": "base"},
    )
    return Scenario(
        spec=ScenarioSpec("spam", rng_seed, params),
        graph=graph,
        seeds=SeedVector(seeds),
        profiles=profiles,
        service_a=service_a,
        service_b=service_b,
    )


def write_scenario(scn: Scenario, out_dir: str | Path) -> dict[str, Path]:
    """Write payments CSV, seeds CSV, profiles JSON-lines and the spec."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "payments": out / "payments.csv",
        "seeds": out / "seeds.csv",
        "profiles": out / "profiles.jsonl",
        "scenario": out / "scenario.json",
    }
    with paths["payments"].open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["payer", "payee", "value_usd", "timestamp"])
        for e in scn.graph.edges:
            w.writerow([e.payer, e.payee, repr(e.value_usd), format_timestamp(e.timestamp)])
    with paths["seeds"].open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "seed"])
        for addr in sorted(scn.seeds.scores):
            w.writerow([addr, repr(scn.seeds.scores[addr])])
    with paths["profiles"].open("w", encoding="utf-8") as fh:
        for p in scn.profiles:
            fh.write(json.dumps(p, sort_keys=True) + "\n")
    meta = {
        "name": scn.spec.name,
        "rng_seed": scn.spec.rng_seed,
        "parameters": scn.spec.parameters,
        "service_a": scn.service_a,
        "service_b": scn.service_b,
    }
    paths["scenario"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


@dataclass(frozen=True)
class MethodOutcome:
    method: str
    score_a: float
    score_b: float

    @property
    def winner(self) -> str:
        if self.score_a > self.score_b:
            return "A"
        if self.score_b > self.score_a:
            return "B"
        return "tie"


@dataclass(frozen=True)
class Verdict:
    service_a: str
    service_b: str
    outcomes: dict[str, MethodOutcome]

    @property
    def baselines_favor_spam(self) -> bool:
        return all(self.outcomes[m].winner == "A" for m in ("count", "volume", "pagerank"))

    @property
    def tracerank_inverts(self) -> bool:
        """TraceRank prefers B while every baseline prefers A."""
        return self.outcomes["tracerank"].winner == "B" and self.baselines_favor_spam

    def to_json(self) -> dict[str, Any]:
        return {
            "service_a": self.service_a,
            "service_b": self.service_b,
            "methods": {
                m: {"score_a": o.score_a, "score_b": o.score_b, "winner": o.winner}
                for m, o in self.outcomes.items()
            },
            "baselines_favor_spam": self.baselines_favor_spam,
            "tracerank_inverts": self.tracerank_inverts,
        }


def scenario_verdict(
    graph: PaymentGraph,
    seeds: SeedVector,
    cfg: SolverConfig | None = None,
    *,
    service_a: str,
    service_b: str,
    lam: float = DEFAULT_LAMBDA,
    as_of: int | None = None,
) -> Verdict:
    """Score both services under all four methods.

    Raises :class:`~tracerank.solver.NotConvergedError` if the TraceRank
    solve does not converge.
    """
    cfg = cfg or SolverConfig()
    flows = aggregate_flows(graph, lam, as_of, addresses=seeds.scores)
    rep = tracerank_power(normalize(flows), seeds, cfg).require_converged()
    pr = pagerank_unseeded(graph, cfg.alpha, cfg.tol, cfg.max_iter, lam=lam, as_of=as_of)
    if not pr.converged:
        raise RuntimeError("unseeded PageRank did not converge")
    results = {
        "tracerank": rep.scores,
        "count": count_rank(graph).scores,
        "volume": volume_rank(graph).scores,
        "pagerank": pr.scores,
    }
    outcomes = {
        m: MethodOutcome(m, float(s.get(service_a, 0.0)), float(s.get(service_b, 0.0)))
        for m, s in results.items()
    }
    return Verdict(service_a, service_b, outcomes)
