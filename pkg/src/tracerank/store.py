"""Flat-file persistence for pipeline artifacts.

Every table is a CSV sorted by its key columns and every summary is JSON
with sorted keys, so identical inputs produce byte-identical directories.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .graph import FlowMatrix, PaymentEdge, PaymentGraph, TransitionMatrix
from .solver import ReputationVector, SeedVector

EDGES = "edges.csv"
NODES = "nodes.csv"
SEEDS = "seeds.csv"
PROFILES = "profiles.jsonl"
SUMMARY = "summary.json"
FLOWS = "flows.csv"
TRANSITION = "transition.json"
SCORES_JSONL = "scores.jsonl"
SCORES_CSV = "scores.csv"
RESIDUALS = "residuals.csv"
PARAMS = "params.json"


def fmt(x: float) -> float | int:
    """Round to 12 significant digits for serialization."""
    if isinstance(x, int):
        return x
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    r = float(f"{x:.12g}")
    return 0.0 if r == 0 else r


def sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path: Path, obj: Any) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_graph(out: Path, graph: PaymentGraph) -> None:
    _write_rows(
        out / EDGES,
        ("payer", "payee", "value_usd", "timestamp"),
        ((e.payer, e.payee, repr(e.value_usd), e.timestamp) for e in graph.edges),
    )
    _write_rows(out / NODES, ("address",), ((a,) for a in graph.nodes))


def read_graph(in_dir: Path) -> PaymentGraph:
    """Reload a graph written by :func:`write_graph` (already validated)."""
    with (in_dir / NODES).open(encoding="utf-8", newline="") as fh:
        nodes = tuple(row["address"] for row in csv.DictReader(fh))
    with (in_dir / EDGES).open(encoding="utf-8", newline="") as fh:
        edges = tuple(
            PaymentEdge(r["payer"], r["payee"], float(r["value_usd"]), int(r["timestamp"]))
            for r in csv.DictReader(fh)
        )
    summary = read_json(in_dir / SUMMARY)
    window = summary.get("window_unix")
    return PaymentGraph(
        nodes=nodes,
        edges=edges,
        window=tuple(window) if window else None,
        dropped_self_loops=summary["dropped_self_loops"],
        excluded_outside_window=summary["excluded_outside_window"],
    )


def write_seeds(out: Path, seeds: SeedVector) -> None:
    _write_rows(
        out / SEEDS,
        ("address", "seed"),
        ((a, repr(seeds.scores[a])) for a in sorted(seeds.scores)),
    )


def write_profiles(out: Path, records: Iterable[Mapping[str, Any]]) -> None:
    rows = sorted(records, key=lambda r: r["address"])
    with (out / PROFILES).open("w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def write_flows(out: Path, flows: FlowMatrix) -> None:
    a = flows.addresses
    rows = sorted(
        (a[j], a[i], fmt(f))
        for j, i, f in zip(flows.rows.tolist(), flows.cols.tolist(), flows.values())
    )
    _write_rows(out / FLOWS, ("payer", "payee", "flow"), rows)


def transition_summary(W: TransitionMatrix) -> dict[str, Any]:
    sums = W.column_sums()
    non_sink = [k for k, a in enumerate(W.addresses) if a not in W.sink_columns]
    dev = max((abs(sums[k] - 1.0) for k in non_sink), default=0.0)
    return {
        "addresses": W.n,
        "nonzeros": int(len(W.weights)),
        "sink_columns": len(W.sink_columns),
        "max_column_sum_deviation": float(dev),
    }


def write_scores(out: Path, rep: ReputationVector) -> None:
    recs = [
        {
            "address": a,
            "score": fmt(r),
            "seed": fmt(s),
            "iterations_used": rep.iterations_used,
        }
        for a, r, s in zip(rep.addresses, rep.values.tolist(), rep.seeds.tolist())
    ]
    with (out / SCORES_JSONL).open("w", encoding="utf-8") as fh:
        for rec in recs:
            fh.write(json.dumps(rec) + "\n")
    _write_rows(
        out / SCORES_CSV,
        ("address", "score", "seed", "iterations_used"),
        ((r["address"], r["score"], r["seed"], r["iterations_used"]) for r in recs),
    )
    _write_rows(
        out / RESIDUALS,
        ("iteration", "residual_l1"),
        ((k, repr(x)) for k, x in enumerate(rep.residuals, start=1)),
    )


def read_scores(in_dir: Path) -> dict[str, float]:
    scores: dict[str, float] = {}
    with (in_dir / SCORES_JSONL).open(encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            scores[rec["address"]] = float(rec["score"])
    return scores


def write_manifest(
    out: Path,
    stage: str,
    version: str,
    parameters: Mapping[str, Any],
    inputs: Mapping[str, Path],
    outputs: Sequence[str],
) -> dict[str, Any]:
    manifest = {
        "stage": stage,
        "tool_version": version,
        "parameters": dict(parameters),
        "inputs": {name: sha256(p) for name, p in sorted(inputs.items())},
        "outputs": {name: sha256(out / name) for name in sorted(outputs)},
    }
    write_json(out / f"{stage}_manifest.json", manifest)
    return manifest
