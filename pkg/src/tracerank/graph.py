"""Payment graph ingest, flow aggregation and column normalization.

A payment is a directed edge payer -> payee carrying a USD value and a
timestamp. Edges into the same payee are aggregated into log-scaled,
exponentially decayed flows, and each payee column is normalized by its
total inbound flow.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
DEFAULT_LAMBDA = 0.01  # day^-1, half-life ~69 days

_FRACTION = re.compile(r"\.(\d+)(?=[+-]\d\d:?\d\d$|$)")

_FIELDS = ("payer", "payee", "value_usd", "timestamp")


class IngestError(ValueError):
    """A payment record failed validation."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FutureEdgeError(ValueError):
    """An edge is timestamped after the age reference instant."""


def normalize_address(raw: Any) -> str:
    if raw is None:
        raise ValueError("address is missing")
    addr = str(raw).strip().lower()
    if not addr:
        raise ValueError("address is empty")
    return addr


def parse_timestamp(raw: Any) -> int:
    """Parse integer Unix seconds or an RFC 3339 string into Unix seconds.

    Fractional seconds are truncated toward the earlier second.
    """
    if isinstance(raw, bool):
        raise ValueError(f"unparseable timestamp {raw!r}")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, float):
        if not math.isfinite(raw) or raw != int(raw):
            raise ValueError(f"unparseable timestamp {raw!r}")
        return int(raw)
    text = str(raw).strip()
    if not text:
        raise ValueError("timestamp is empty")
    if text.lstrip("+-").isdigit():
        return int(text)
    iso = text
    if iso[-1] in "zZ":
        iso = iso[:-1] + "+00:00"
    # fromisoformat before 3.11 only takes 3- or 6-digit fractions
    iso = _FRACTION.sub(lambda m: "." + m.group(1)[:6].ljust(6, "0"), iso)
    try:
        dt = datetime.fromisoformat(iso)
    except ValueError:
        raise ValueError(f"unparseable timestamp {text!r}") from None
    if dt.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return math.floor(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_value(raw: Any) -> float:
    try:
        value = Decimal(str(raw).strip())
    except InvalidOperation:
        raise ValueError(f"value_usd {raw!r} is not a decimal number") from None
    if not value.is_finite():
        raise ValueError(f"value_usd {raw!r} is not finite")
    if value < 0:
        raise ValueError(f"value_usd {raw!r} is negative")
    return float(value)


@dataclass(frozen=True, order=True)
class PaymentEdge:
    payer: str
    payee: str
    value_usd: float
    timestamp: int


@dataclass(frozen=True)
class PaymentGraph:
    nodes: tuple[str, ...]
    edges: tuple[PaymentEdge, ...]
    window: tuple[int, int] | None = None
    dropped_self_loops: int = 0
    excluded_outside_window: int = 0

    def __post_init__(self) -> None:
        known = set(self.nodes)
        for e in self.edges:
            if e.payer not in known or e.payee not in known:
                raise ValueError(f"edge endpoint missing from node set: {e}")
            if self.window is not None and not (
                self.window[0] <= e.timestamp <= self.window[1]
            ):
                raise ValueError(f"edge outside observation window: {e}")

    @property
    def index(self) -> dict[str, int]:
        return {a: k for k, a in enumerate(self.nodes)}

    def summary(self) -> dict[str, Any]:
        return {
            "nodes": len(self.nodes),
            "edges": len(self.edges),
            "dropped_self_loops": self.dropped_self_loops,
            "excluded_outside_window": self.excluded_outside_window,
            "window": (
                None
                if self.window is None
                else {
                    "start": format_timestamp(self.window[0]),
                    "end": format_timestamp(self.window[1]),
                }
            ),
        }


def _coerce_record(rec: Any) -> Mapping[str, Any]:
    if isinstance(rec, Mapping):
        return rec
    if isinstance(rec, PaymentEdge):
        return {f: getattr(rec, f) for f in _FIELDS}
    if isinstance(rec, Sequence) and not isinstance(rec, str) and len(rec) == 4:
        return dict(zip(_FIELDS, rec))
    raise IngestError(f"unrecognized record {rec!r}")


def ingest_payments(
    records: Iterable[Any],
    *,
    window: tuple[int, int] | None = None,
    extra_nodes: Iterable[str] = (),
) -> PaymentGraph:
    """Validate payment records and build a :class:`PaymentGraph`.

    ``records`` yields mappings with ``payer``, ``payee``, ``value_usd`` and
    ``timestamp`` keys, 4-tuples in that order, or ``(line_no, record)``
    pairs as produced by :func:`read_payments`. Self-loops are dropped and
    counted; records outside ``window`` (inclusive) are excluded.
    """
    if window is not None and window[0] > window[1]:
        raise ValueError(f"window start {window[0]} is after end {window[1]}")
    edges: list[PaymentEdge] = []
    nodes: set[str] = {normalize_address(a) for a in extra_nodes}
    self_loops = 0
    outside = 0
    for pos, item in enumerate(records, start=1):
        line = pos
        if (
            isinstance(item, tuple)
            and len(item) == 2
            and isinstance(item[0], int)
            and isinstance(item[1], Mapping)
        ):
            line, item = item
        rec = _coerce_record(item)
        missing = [f for f in _FIELDS if rec.get(f) in (None, "")]
        if missing:
            raise IngestError(f"missing field(s) {', '.join(missing)}", line)
        try:
            payer = normalize_address(rec["payer"])
            payee = normalize_address(rec["payee"])
            value = parse_value(rec["value_usd"])
            ts = parse_timestamp(rec["timestamp"])
        except ValueError as exc:
            raise IngestError(str(exc), line) from None
        if payer == payee:
            self_loops += 1
            continue
        if window is not None and not (window[0] <= ts <= window[1]):
            outside += 1
            continue
        nodes.add(payer)
        nodes.add(payee)
        edges.append(PaymentEdge(payer, payee, value, ts))
    if self_loops:
        logger.warning("dropped %d self-loop payment(s)", self_loops)
    return PaymentGraph(
        nodes=tuple(sorted(nodes)),
        edges=tuple(sorted(edges)),
        window=window,
        dropped_self_loops=self_loops,
        excluded_outside_window=outside,
    )


def read_payments(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    """Yield ``(line_no, record)`` pairs from a CSV or JSON-lines file.

    Files ending in ``.jsonl``, ``.ndjson`` or ``.json`` are read as JSON
    lines; anything else as CSV with a header row.
    """
    path = Path(path)
    if path.suffix.lower() in (".jsonl", ".ndjson", ".json"):
        with path.open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise IngestError(f"malformed JSON: {exc.msg}", line_no) from None
                if not isinstance(rec, dict):
                    raise IngestError("record is not a JSON object", line_no)
                yield line_no, rec
        return
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError("empty file, header row required", 1) from None
        absent = [f for f in _FIELDS if f not in header]
        if absent:
            raise IngestError(f"header lacks column(s) {', '.join(absent)}", 1)
        for row in reader:
            line_no = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"expected {len(header)} columns, got {len(row)}", line_no
                )
            yield line_no, dict(zip(header, row))


def load_payments(
    path: str | Path, *, window: tuple[int, int] | None = None
) -> PaymentGraph:
    return ingest_payments(read_payments(path), window=window)


@dataclass(frozen=True)
class FlowMatrix:
    """Aggregated payer -> payee flows.

    Flows are held per payee column relative to that column's youngest
    edge: ``rel[k] * exp(-lam * ref_age_s[col] / 86400)`` is the true flow.
    Normalization only needs the relative values, so a shared decay factor
    never has to be multiplied in and divided back out.
    """

    addresses: tuple[str, ...]
    rows: np.ndarray  # payer index
    cols: np.ndarray  # payee index
    rel: np.ndarray
    ref_age_s: np.ndarray  # per column, seconds
    lam: float = DEFAULT_LAMBDA
    as_of: int | None = None

    @classmethod
    def from_entries(
        cls,
        entries: Mapping[tuple[str, str], float],
        addresses: Iterable[str] | None = None,
    ) -> "FlowMatrix":
        """Build directly from ``{(payer, payee): flow}`` with no decay offset."""
        universe = set(addresses or ())
        for j, i in entries:
            universe.update((j, i))
        addrs = tuple(sorted(universe))
        idx = {a: k for k, a in enumerate(addrs)}
        items = sorted(
            (idx[i], idx[j], float(f)) for (j, i), f in entries.items()
        )
        for _, _, f in items:
            if not math.isfinite(f) or f < 0:
                raise ValueError(f"flow {f!r} must be finite and nonnegative")
        items = [t for t in items if t[2] > 0]
        return cls(
            addresses=addrs,
            rows=np.array([t[1] for t in items], dtype=np.int64),
            cols=np.array([t[0] for t in items], dtype=np.int64),
            rel=np.array([t[2] for t in items], dtype=np.float64),
            ref_age_s=np.zeros(len(addrs), dtype=np.int64),
            lam=0.0,
        )

    def values(self) -> np.ndarray:
        """True flow values aligned with ``rows``/``cols``."""
        days = self.ref_age_s[self.cols] / SECONDS_PER_DAY
        return self.rel * np.exp(-self.lam * days)

    @property
    def entries(self) -> dict[tuple[str, str], float]:
        a = self.addresses
        return {
            (a[j], a[i]): float(f)
            for j, i, f in zip(self.rows.tolist(), self.cols.tolist(), self.values())
        }

    def __len__(self) -> int:
        return len(self.rel)


def aggregate_flows(
    graph: PaymentGraph,
    lam: float = DEFAULT_LAMBDA,
    as_of: int | None = None,
    *,
    clamp_future: bool = False,
    prune_below: float | None = None,
    addresses: Iterable[str] = (),
) -> FlowMatrix:
    """Sum ``log(1 + value) * exp(-lam * age_days)`` over edges per payer/payee.

    ``as_of`` defaults to the latest edge timestamp. An edge newer than
    ``as_of`` raises :class:`FutureEdgeError` unless ``clamp_future`` is set,
    in which case its age is taken as zero. ``addresses`` widens the address
    universe beyond the graph's nodes.
    """
    if not (lam >= 0 and math.isfinite(lam)):
        raise ValueError(f"lambda must be finite and >= 0, got {lam!r}")
    if as_of is None:
        as_of = max((e.timestamp for e in graph.edges), default=0)
    addrs = tuple(sorted(set(graph.nodes).union(addresses)))
    idx = {a: k for k, a in enumerate(addrs)}

    # (payee, payer) -> [(age_s, log-value)]
    terms: dict[tuple[int, int], list[tuple[int, float]]] = defaultdict(list)
    for e in graph.edges:
        lv = math.log1p(e.value_usd)
        if lv == 0.0:
            continue
        age = as_of - e.timestamp
        if age < 0:
            if not clamp_future:
                raise FutureEdgeError(
                    f"edge {e.payer}->{e.payee} at {e.timestamp} is after as_of {as_of}"
                )
            age = 0
        terms[(idx[e.payee], idx[e.payer])].append((age, lv))

    ref = np.zeros(len(addrs), dtype=np.int64)
    youngest: dict[int, int] = {}
    for (i, _), ts in terms.items():
        a = min(t[0] for t in ts)
        youngest[i] = a if i not in youngest else min(youngest[i], a)
    for i, a in youngest.items():
        ref[i] = a

    rows: list[int] = []
    cols: list[int] = []
    rel: list[float] = []
    for (i, j) in sorted(terms):
        r = int(ref[i])
        f = math.fsum(
            lv * math.exp(-lam * ((age - r) / SECONDS_PER_DAY))
            for age, lv in sorted(terms[(i, j)])
        )
        rows.append(j)
        cols.append(i)
        rel.append(f)

    flows = FlowMatrix(
        addresses=addrs,
        rows=np.array(rows, dtype=np.int64),
        cols=np.array(cols, dtype=np.int64),
        rel=np.array(rel, dtype=np.float64),
        ref_age_s=ref,
        lam=float(lam),
        as_of=as_of,
    )
    if prune_below is not None:
        keep = flows.values() >= prune_below
        flows = FlowMatrix(
            addresses=addrs,
            rows=flows.rows[keep],
            cols=flows.cols[keep],
            rel=flows.rel[keep],
            ref_age_s=ref,
            lam=flows.lam,
            as_of=as_of,
        )
    return flows


@dataclass(frozen=True)
class TransitionMatrix:
    """Column-normalized inbound flows; ``w[j, i]`` is payer j's share of i's inflow."""

    addresses: tuple[str, ...]
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    sink_columns: frozenset[str] = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return len(self.addresses)

    @property
    def index(self) -> dict[str, int]:
        return {a: k for k, a in enumerate(self.addresses)}

    @property
    def entries(self) -> dict[tuple[str, str], float]:
        a = self.addresses
        return {
            (a[j], a[i]): float(w)
            for j, i, w in zip(self.rows.tolist(), self.cols.tolist(), self.weights)
        }

    def column(self, address: str) -> dict[str, float]:
        i = self.index[address]
        mask = self.cols == i
        return {
            self.addresses[j]: float(w)
            for j, w in zip(self.rows[mask].tolist(), self.weights[mask])
        }

    def column_sums(self) -> np.ndarray:
        out = np.zeros(self.n)
        for i in range(self.n):
            out[i] = math.fsum(self.weights[self.cols == i])
        return out

    def transpose_csr(self) -> sparse.csr_matrix:
        """``W^T`` as CSR with sorted indices (row i holds column i of W)."""
        m = sparse.csr_matrix(
            (self.weights, (self.cols, self.rows)), shape=(self.n, self.n)
        )
        m.sort_indices()
        return m

    def to_dense(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        w[self.rows, self.cols] = self.weights
        return w

    @classmethod
    def from_dense(
        cls, w: np.ndarray, addresses: Sequence[str] | None = None
    ) -> "TransitionMatrix":
        """Wrap a dense matrix that is already column-normalized."""
        w = np.asarray(w, dtype=np.float64)
        n = w.shape[0]
        addrs = tuple(addresses) if addresses is not None else tuple(
            f"n{k:04d}" for k in range(n)
        )
        j, i = np.nonzero(w)
        order = np.lexsort((j, i))
        j, i = j[order], i[order]
        has_in = np.zeros(n, dtype=bool)
        has_in[i] = True
        return cls(
            addresses=addrs,
            rows=j.astype(np.int64),
            cols=i.astype(np.int64),
            weights=w[j, i],
            sink_columns=frozenset(addrs[k] for k in range(n) if not has_in[k]),
        )


def normalize(flows: FlowMatrix) -> TransitionMatrix:
    """Divide each inbound flow by its column total; zero-total columns are sinks."""
    n = len(flows.addresses)
    order = np.lexsort((flows.rows, flows.cols))
    rows, cols, rel = flows.rows[order], flows.cols[order], flows.rel[order]
    weights = np.zeros(len(rel))
    is_sink = np.ones(n, dtype=bool)
    # rows are grouped by column after the lexsort
    bounds = np.flatnonzero(np.diff(cols)) + 1
    for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, len(cols)]):
        if lo == hi:
            continue
        total = math.fsum(rel[lo:hi])
        if total > 0:
            weights[lo:hi] = rel[lo:hi] / total
            is_sink[cols[lo]] = False
    keep = weights > 0
    return TransitionMatrix(
        addresses=flows.addresses,
        rows=rows[keep],
        cols=cols[keep],
        weights=weights[keep],
        sink_columns=frozenset(flows.addresses[k] for k in np.flatnonzero(is_sink)),
    )
