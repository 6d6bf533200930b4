"""Command-line pipeline: ingest -> compute -> rank / query / compare.

Exit codes: 0 success, 2 input or parameter error, 3 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__, store
from .baselines import count_rank, pagerank_unseeded, volume_rank
from .graph import (
    DEFAULT_LAMBDA,
    FutureEdgeError,
    IngestError,
    PaymentGraph,
    aggregate_flows,
    format_timestamp,
    ingest_payments,
    normalize,
    parse_timestamp,
    read_payments,
)
from .retrieval import DEFAULT_DIM, QueryFilters, ServiceIndex, query
from .scenarios import scenario_spam, write_scenario
from .solver import NotConvergedError, SeedVector, SolverConfig, load_seeds, tracerank_power

log = logging.getLogger("tracerank")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3

METHODS = ("tracerank", "count", "volume", "pagerank")


class UsageError(Exception):
    pass


class PageRankNotConverged(RuntimeError):
    pass


def _out_dir(arg: str | None, fallback: str | None = None) -> Path:
    chosen = arg or os.environ.get("TRACERANK_OUT") or fallback
    if not chosen:
        raise UsageError("no output directory: pass --out or set TRACERANK_OUT")
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _ranked(scores: dict[str, float], top_n: int | None) -> list[tuple[str, float]]:
    items = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return items if top_n is None else items[:top_n]


def _load_params(in_dir: Path) -> dict[str, Any]:
    path = in_dir / store.PARAMS
    return store.read_json(path) if path.exists() else {}


def _require(in_dir: Path, *names: str) -> None:
    missing = [n for n in names if not (in_dir / n).exists()]
    if missing:
        raise UsageError(f"{in_dir}: missing artifact(s) {', '.join(missing)}")


def _tracerank_scores(in_dir: Path, force: bool) -> dict[str, float]:
    _require(in_dir, store.SCORES_JSONL, store.PARAMS)
    params = _load_params(in_dir)
    if not params.get("converged", False) and not force:
        raise UsageError(
            f"{in_dir}: stored scores did not converge; rerun compute or pass --force"
        )
    return store.read_scores(in_dir)


def _baseline_scores(
    graph: PaymentGraph, method: str, params: dict[str, Any], unweighted: bool
) -> dict[str, float]:
    if method == "count":
        return {a: int(v) for a, v in count_rank(graph).scores.items()}
    if method == "volume":
        return volume_rank(graph).scores
    pr = pagerank_unseeded(
        graph,
        params.get("alpha", 0.85),
        params.get("tol", 1e-9),
        params.get("max_iter", 200),
        weighted=not unweighted,
        lam=params.get("lambda", DEFAULT_LAMBDA),
        as_of=params.get("as_of"),
        clamp_future=params.get("clamp_future", False),
    )
    if not pr.converged:
        raise PageRankNotConverged(
            f"unseeded PageRank did not converge in {pr.iterations_used} iterations"
        )
    return pr.scores


# -- commands ---------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    out = _out_dir(args.out)
    window = None
    if args.window_start is not None or args.window_end is not None:
        if args.window_start is None or args.window_end is None:
            raise UsageError("--window-start and --window-end must be given together")
        window = (parse_timestamp(args.window_start), parse_timestamp(args.window_end))
    inputs = {"payments": Path(args.payments)}
    if args.seeds and Path(args.seeds).exists():
        seeds = load_seeds(args.seeds)
        inputs["seeds"] = Path(args.seeds)
    else:
        if args.seeds:
            log.warning("seeds file %s not found; all seeds default to 0", args.seeds)
        else:
            log.warning("no seeds file given; all seeds default to 0")
        seeds = SeedVector()
    index = None
    if args.profiles:
        index = ServiceIndex.load(args.profiles, args.dim)
        inputs["profiles"] = Path(args.profiles)

    # seeded and profiled addresses belong to the universe even without payments
    extra = set(seeds.scores)
    if index is not None:
        extra.update(p.address for p in index)
    graph = ingest_payments(read_payments(args.payments), window=window, extra_nodes=extra)

    outputs = [store.EDGES, store.NODES, store.SEEDS, store.SUMMARY]
    store.write_graph(out, graph)
    store.write_seeds(out, seeds)
    if index is not None:
        store.write_profiles(
            out, (p.to_json(with_embedding=_has_embeddings(args.profiles)) for p in index)
        )
        outputs.append(store.PROFILES)

    summary = graph.summary()
    summary["seeded_addresses"] = len(seeds.scores)
    summary["window_unix"] = list(window) if window else None
    store.write_json(out / store.SUMMARY, summary)
    store.write_manifest(out, "ingest", __version__, {"dim": args.dim}, inputs, outputs)
    _emit({k: v for k, v in summary.items() if k != "window_unix"})
    return EXIT_OK


def _has_embeddings(path: str) -> bool:
    with open(path, encoding="utf-8") as fh:
        return any(line.strip() and "embedding" in json.loads(line) for line in fh)


def cmd_compute(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    _require(in_dir, store.EDGES, store.NODES, store.SEEDS, store.SUMMARY)
    out = _out_dir(args.out, fallback=str(in_dir))
    cfg = SolverConfig(alpha=args.alpha, tol=args.tol, max_iter=args.max_iter)
    graph = store.read_graph(in_dir)
    seeds = load_seeds(in_dir / store.SEEDS)
    as_of = parse_timestamp(args.as_of) if args.as_of is not None else None

    flows = aggregate_flows(
        graph,
        args.lam,
        as_of,
        clamp_future=args.clamp_future,
        prune_below=args.prune_below,
        addresses=seeds.scores,
    )
    W = normalize(flows)
    rep = tracerank_power(W, seeds, cfg)

    if out.resolve() != in_dir.resolve():
        # keep the output directory self-contained for rank/query/compare
        for name in (store.EDGES, store.NODES, store.SEEDS, store.SUMMARY, store.PROFILES):
            if (in_dir / name).exists():
                shutil.copyfile(in_dir / name, out / name)

    store.write_flows(out, flows)
    store.write_json(out / store.TRANSITION, store.transition_summary(W))
    store.write_scores(out, rep)
    params = {
        "alpha": cfg.alpha,
        "lambda": args.lam,
        "as_of": flows.as_of,
        "as_of_utc": format_timestamp(flows.as_of),
        "tol": cfg.tol,
        "max_iter": cfg.max_iter,
        "clamp_future": args.clamp_future,
        "prune_below": args.prune_below,
        "converged": rep.converged,
        "iterations_used": rep.iterations_used,
        "residual_l1": rep.residual_l1,
    }
    store.write_json(out / store.PARAMS, params)
    outputs = [store.FLOWS, store.TRANSITION, store.SCORES_JSONL, store.SCORES_CSV,
               store.RESIDUALS, store.PARAMS]
    inputs = {n: in_dir / n for n in (store.EDGES, store.NODES, store.SEEDS)}
    store.write_manifest(out, "compute", __version__, params, inputs, outputs)
    _emit({
        "addresses": len(rep.addresses),
        "converged": rep.converged,
        "iterations_used": rep.iterations_used,
        "residual_l1": rep.residual_l1,
    })
    if not rep.converged:
        log.error("power iteration did not converge; best iterate written to %s", out)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    _require(in_dir, store.EDGES, store.NODES, store.SUMMARY)
    if args.top_n < 1:
        raise UsageError(f"--top-n must be positive, got {args.top_n}")
    graph = store.read_graph(in_dir)
    if args.method == "tracerank":
        scores = _tracerank_scores(in_dir, args.force)
    else:
        scores = _baseline_scores(graph, args.method, _load_params(in_dir), args.unweighted)
    if not args.all_addresses:
        scores = {a: scores.get(a, 0.0) for a in _services(in_dir, graph)}
    _emit([
        {"rank": k, "address": a, "method": args.method, "score": store.fmt(s)}
        for k, (a, s) in enumerate(_ranked(scores, args.top_n), start=1)
    ])
    return EXIT_OK


def cmd_query(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    _require(in_dir, store.PROFILES)
    index = ServiceIndex.load(in_dir / store.PROFILES, args.dim)
    scores = _tracerank_scores(in_dir, args.force)
    active = None
    if args.since is not None or args.until is not None:
        lo = parse_timestamp(args.since) if args.since is not None else -(2**63)
        hi = parse_timestamp(args.until) if args.until is not None else 2**63
        active = {e.payee for e in store.read_graph(in_dir).edges if lo <= e.timestamp <= hi}
    filters = QueryFilters(chain=args.chain, tags=tuple(args.tag or ()), addresses=active)
    results = query(args.text, args.k, index, scores, filters=filters, epsilon=args.epsilon)
    _emit([
        {
            "rank": r.rank,
            "address": r.address,
            "final_score": store.fmt(r.final_score),
            "similarity": store.fmt(r.similarity),
            "raw_similarity": store.fmt(r.raw_similarity),
            "tracerank": store.fmt(r.tracerank),
        }
        for r in results
    ])
    return EXIT_OK


def _services(in_dir: Path, graph: PaymentGraph) -> list[str]:
    """Profiled addresses if profiles were ingested, else every payee."""
    if (in_dir / store.PROFILES).exists():
        with (in_dir / store.PROFILES).open(encoding="utf-8") as fh:
            return sorted(json.loads(l)["address"] for l in fh if l.strip())
    payees = sorted({e.payee for e in graph.edges})
    return payees or list(graph.nodes)


def cmd_compare(args: argparse.Namespace) -> int:
    in_dir = Path(args.in_dir)
    _require(in_dir, store.EDGES, store.NODES, store.SUMMARY)
    graph = store.read_graph(in_dir)
    params = _load_params(in_dir)
    services = _services(in_dir, graph)
    per_method = {"tracerank": _tracerank_scores(in_dir, args.force)}
    for m in METHODS[1:]:
        per_method[m] = _baseline_scores(graph, m, params, args.unweighted)

    ranks: dict[str, dict[str, int]] = {}
    for m, scores in per_method.items():
        sub = {a: scores.get(a, 0) for a in services}
        ranks[m] = {a: k for k, (a, _) in enumerate(_ranked(sub, None), start=1)}
    rows = [
        {
            "address": a,
            **{f"{m}_score": store.fmt(per_method[m].get(a, 0)) for m in METHODS},
            **{f"{m}_rank": ranks[m][a] for m in METHODS},
        }
        for a in services
    ]
    rows.sort(key=lambda r: (r["tracerank_rank"], r["address"]))
    top = {m: min(ranks[m], key=ranks[m].get) if services else None for m in METHODS}
    summary = {
        "top": top,
        "inverted_vs": [m for m in METHODS[1:] if top[m] != top["tracerank"]],
    }
    if args.format == "table":
        _print_table(rows, summary)
    else:
        _emit({"services": rows, "summary": summary})
    return EXIT_OK


def _print_table(rows: list[dict[str, Any]], summary: dict[str, Any]) -> None:
    header = ["address"] + [f"{m}" for m in METHODS]
    lines = [header]
    for r in rows:
        lines.append(
            [r["address"]]
            + [f"{r[f'{m}_score']:.6g} (#{r[f'{m}_rank']})" for m in METHODS]
        )
    widths = [max(len(str(line[c])) for line in lines) for c in range(len(header))]
    for line in lines:
        sys.stdout.write("  ".join(str(v).ljust(w) for v, w in zip(line, widths)).rstrip() + "\n")
    sys.stdout.write(
        "top: " + ", ".join(f"{m}={summary['top'][m]}" for m in METHODS) + "\n"
    )
    inv = summary["inverted_vs"]
    sys.stdout.write(f"tracerank top differs from: {', '.join(inv) if inv else 'none'}\n")


def cmd_scenario(args: argparse.Namespace) -> int:
    out = _out_dir(args.out)
    scn = scenario_spam(
        n_spam_payers=args.n_spam,
        spam_value=args.spam_value,
        n_legit_payers=args.n_legit,
        legit_total=args.legit_total,
        legit_seed=args.legit_seed,
        rng_seed=args.seed,
        spam_seed=args.spam_seed,
        spam_repeat=args.spam_repeat,
        legit_spread=args.legit_spread,
    )
    paths = write_scenario(scn, out)
    _emit({k: str(v) for k, v in sorted(paths.items())})
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.85, help="damping in (0, 1)")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA,
                   help="decay rate per day (default %(default)s)")
    p.add_argument("--as-of", help="age reference, RFC 3339 or Unix seconds (default: latest payment)")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--clamp-future", action="store_true",
                   help="treat payments after --as-of as age 0 instead of failing")
    p.add_argument("--prune-below", type=float, default=None,
                   help="drop flows smaller than this after decay")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tracerank", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate payments and seeds into an artifact directory")
    p.add_argument("payments")
    p.add_argument("--seeds")
    p.add_argument("--profiles")
    p.add_argument("--out", help="output directory (default: $TRACERANK_OUT)")
    p.add_argument("--window-start")
    p.add_argument("--window-end")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("compute", help="aggregate flows and solve for reputation scores")
    p.add_argument("in_dir")
    p.add_argument("--out", help="output directory (default: $TRACERANK_OUT, then in_dir)")
    _solver_flags(p)
    p.set_defaults(func=cmd_compute)

    p = sub.add_parser("rank", help="top addresses by one method")
    p.add_argument("in_dir")
    p.add_argument("--method", choices=METHODS, default="tracerank")
    p.add_argument("--top-n", type=int, default=10)
    p.add_argument("--all-addresses", action="store_true",
                   help="rank payers too, not only services")
    p.add_argument("--unweighted", action="store_true", help="plain-adjacency PageRank")
    p.add_argument("--force", action="store_true", help="accept non-converged scores")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("query", help="natural-language service discovery")
    p.add_argument("in_dir")
    p.add_argument("text")
    p.add_argument("-k", type=int, default=10)
    p.add_argument("--chain")
    p.add_argument("--tag", action="append")
    p.add_argument("--since", help="only services paid at or after this instant")
    p.add_argument("--until", help="only services paid at or before this instant")
    p.add_argument("--epsilon", type=float, default=0.0, help="additive reputation floor")
    p.add_argument("--dim", type=int, default=DEFAULT_DIM)
    p.add_argument("--force", action="store_true", help="accept non-converged scores")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("compare", help="side-by-side scores under every method")
    p.add_argument("in_dir")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--unweighted", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("scenario", help="generate the spam-versus-legitimate economy")
    p.add_argument("--out", help="output directory (default: $TRACERANK_OUT)")
    p.add_argument("--seed", type=int, default=0, help="rng seed")
    p.add_argument("--n-spam", type=int, default=10_000)
    p.add_argument("--spam-value", type=float, default=1.0)
    p.add_argument("--spam-seed", type=float, default=0.0)
    p.add_argument("--spam-repeat", type=int, default=1)
    p.add_argument("--n-legit", type=int, default=50)
    p.add_argument("--legit-total", type=float, default=5_000.0)
    p.add_argument("--legit-seed", type=float, default=0.9)
    p.add_argument("--legit-spread", type=float, default=0.0)
    p.set_defaults(func=cmd_scenario)
    return parser


def _configure_logging(verbose: bool) -> None:
    pkg = logging.getLogger("tracerank")
    for h in list(pkg.handlers):
        if getattr(h, "_tracerank_cli", False):
            pkg.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    handler._tracerank_cli = True
    pkg.addHandler(handler)
    pkg.setLevel(logging.INFO if verbose else logging.WARNING)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except (NotConvergedError, PageRankNotConverged) as exc:
        log.error("%s", exc)
        return EXIT_NONCONVERGED
    except (UsageError, IngestError, FutureEdgeError, ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
