"""Service profile index and fused semantic/reputation queries.

A query's final score for a service is its (clamped) cosine similarity to
the service profile multiplied by the service's reputation score.
"""

from __future__ import annotations

import json
import math
import re
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Collection, Iterable, Mapping

import numpy as np

from .graph import normalize_address
from .solver import NotConvergedError, ReputationVector

DEFAULT_DIM = 256

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def embed_text(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Hashed bag-of-words embedding, L2-normalized.

    Each token is bucketed by CRC-32 of its UTF-8 bytes modulo ``dim``.
    """
    if dim <= 0:
        raise ValueError(f"dim must be positive, got {dim}")
    vec = np.zeros(dim)
    for tok in tokenize(text):
        vec[zlib.crc32(tok.encode("utf-8")) % dim] += 1.0
    norm = math.sqrt(math.fsum((vec * vec).tolist()))
    return vec / norm if norm > 0 else vec


def cosine(q: np.ndarray, p: np.ndarray) -> float:
    """Raw cosine similarity in [-1, 1]; 0 when either vector is zero."""
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if q.shape != p.shape:
        raise ValueError(f"dimension mismatch: {q.shape} vs {p.shape}")
    nq = math.sqrt(math.fsum((q * q).tolist()))
    np_ = math.sqrt(math.fsum((p * p).tolist()))
    if nq == 0.0 or np_ == 0.0:
        return 0.0
    c = math.fsum((q * p).tolist()) / (nq * np_)
    return min(1.0, max(-1.0, c))


@dataclass(frozen=True)
class ServiceProfile:
    address: str
    description: str
    embedding: np.ndarray
    tags: tuple[str, ...] = ()
    chain: str | None = None

    def to_json(self, with_embedding: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {"address": self.address, "description": self.description}
        if self.tags:
            out["tags"] = list(self.tags)
        if self.chain is not None:
            out["chain"] = self.chain
        if with_embedding:
            out["embedding"] = self.embedding.tolist()
        return out


@dataclass(frozen=True)
class RankedResult:
    rank: int
    address: str
    final_score: float
    similarity: float
    raw_similarity: float
    tracerank: float

    def to_json(self) -> dict[str, Any]:
        return asdict(self)


class ServiceIndex:
    """In-memory profile store with an exact brute-force scan."""

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self._profiles: dict[str, ServiceProfile] = {}

    def __len__(self) -> int:
        return len(self._profiles)

    def __iter__(self):
        return iter(self.profiles)

    @property
    def profiles(self) -> list[ServiceProfile]:
        return [self._profiles[a] for a in sorted(self._profiles)]

    def add(
        self,
        address: str,
        description: str,
        *,
        embedding: Iterable[float] | None = None,
        tags: Iterable[str] = (),
        chain: str | None = None,
    ) -> ServiceProfile:
        address = normalize_address(address)
        if not description or not description.strip():
            raise ValueError(f"profile {address}: description is empty")
        if embedding is None:
            vec = embed_text(description, self.dim)
        else:
            vec = np.asarray(list(embedding), dtype=np.float64)
            if vec.shape != (self.dim,):
                raise ValueError(
                    f"profile {address}: embedding has dimension {vec.size}, index expects {self.dim}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValueError(f"profile {address}: embedding is not finite")
        prof = ServiceProfile(
            address=address,
            description=description,
            embedding=vec,
            tags=tuple(tags),
            chain=chain,
        )
        self._profiles[address] = prof
        return prof

    @classmethod
    def from_records(
        cls, records: Iterable[Mapping[str, Any]], dim: int = DEFAULT_DIM
    ) -> "ServiceIndex":
        index = cls(dim)
        for rec in records:
            index.add(
                rec["address"],
                rec.get("description", ""),
                embedding=rec.get("embedding"),
                tags=rec.get("tags") or (),
                chain=rec.get("chain"),
            )
        return index

    @classmethod
    def load(cls, path: str | Path, dim: int = DEFAULT_DIM) -> "ServiceIndex":
        records = []
        with Path(path).open(encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}: line {line_no}: {exc.msg}") from None
        return cls.from_records(records, dim)


@dataclass
class QueryFilters:
    """Pre-filters applied before scoring; ``None`` disables a filter."""

    chain: str | None = None
    tags: Collection[str] = field(default_factory=tuple)
    addresses: Collection[str] | None = None  # e.g. services paid within a time window

    def accept(self, p: ServiceProfile) -> bool:
        if self.chain is not None and p.chain != self.chain:
            return False
        if any(t not in p.tags for t in self.tags):
            return False
        if self.addresses is not None and p.address not in self.addresses:
            return False
        return True


def _reputation_lookup(reputation: ReputationVector | Mapping[str, float], force: bool):
    if isinstance(reputation, ReputationVector):
        if not reputation.converged and not force:
            raise NotConvergedError(reputation)
        return reputation.scores
    return dict(reputation)


def query_vector(
    q: np.ndarray,
    k: int,
    index: ServiceIndex,
    reputation: ReputationVector | Mapping[str, float],
    *,
    filters: QueryFilters | None = None,
    epsilon: float = 0.0,
    force: bool = False,
) -> list[RankedResult]:
    """Top-``k`` services by ``max(cos, 0) * (reputation + epsilon)``.

    Ties on the final score are broken by address ascending. Services with
    no reputation entry count as zero.
    """
    if k <= 0:
        raise ValueError(f"k must be a positive integer, got {k}")
    if len(index) == 0:
        raise ValueError("index is empty")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    rep = _reputation_lookup(reputation, force)
    filters = filters or QueryFilters()
    scored = []
    for p in index.profiles:
        if not filters.accept(p):
            continue
        raw = cosine(q, p.embedding)
        sim = max(0.0, raw)
        tr = float(rep.get(p.address, 0.0))
        scored.append((sim * (tr + epsilon), p.address, sim, raw, tr))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [
        RankedResult(rank, addr, final, sim, raw, tr)
        for rank, (final, addr, sim, raw, tr) in enumerate(scored[:k], start=1)
    ]


def query(
    text: str,
    k: int,
    index: ServiceIndex,
    reputation: ReputationVector | Mapping[str, float],
    **kwargs: Any,
) -> list[RankedResult]:
    """Embed ``text`` with the hashed embedder and run :func:`query_vector`."""
    return query_vector(embed_text(text, index.dim), k, index, reputation, **kwargs)
