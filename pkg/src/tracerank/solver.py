"""Seeded reputation propagation over a column-normalized payment graph.

Scores solve ``r = s + alpha * W^T r``: every address keeps its own seed and
receives ``alpha`` times the flow-weighted average reputation of the
addresses that paid it.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .graph import TransitionMatrix, normalize_address

DENSE_LIMIT = 2000


class NotConvergedError(RuntimeError):
    """Raised when a consumer requires a converged reputation vector."""

    def __init__(self, result: "ReputationVector"):
        self.result = result
        super().__init__(
            f"power iteration did not converge in {result.iterations_used} "
            f"iterations (residual {result.residual_l1:.3e})"
        )


class DenseLimitError(ValueError):
    pass


@dataclass(frozen=True)
class SeedVector:
    scores: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean: dict[str, float] = {}
        for addr, v in self.scores.items():
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"seed for {addr!r} must be finite and >= 0, got {v!r}")
            clean[normalize_address(addr)] = v
        object.__setattr__(self, "scores", clean)

    def get(self, address: str) -> float:
        return self.scores.get(address, 0.0)

    def as_array(self, addresses: Iterable[str]) -> np.ndarray:
        return np.array([self.get(a) for a in addresses], dtype=np.float64)

    def total(self) -> float:
        return math.fsum(self.scores.values())


def load_seeds(path: str | Path) -> SeedVector:
    """Read a seeds CSV with ``address`` and ``seed`` columns.

    Repeated addresses are an error rather than silently overwritten.
    """
    scores: dict[str, float] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"address", "seed"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain 'address' and 'seed'")
        for row in reader:
            line = reader.line_num
            try:
                addr = normalize_address(row["address"])
                v = float(row["seed"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: line {line}: {exc}") from None
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{path}: line {line}: seed must be finite and >= 0")
            if addr in scores:
                raise ValueError(f"{path}: line {line}: duplicate address {addr}")
            scores[addr] = v
    return SeedVector(scores)


@dataclass(frozen=True)
class SolverConfig:
    alpha: float = 0.85
    tol: float = 1e-9
    max_iter: int = 200

    def __post_init__(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if not (self.tol > 0 and math.isfinite(self.tol)):
            raise ValueError(f"tol must be positive, got {self.tol!r}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter!r}")


@dataclass(frozen=True)
class ReputationVector:
    addresses: tuple[str, ...]
    values: np.ndarray
    seeds: np.ndarray
    iterations_used: int
    residual_l1: float
    converged: bool = True
    residuals: tuple[float, ...] = ()

    @property
    def scores(self) -> dict[str, float]:
        return dict(zip(self.addresses, self.values.tolist()))

    def score(self, address: str) -> float:
        try:
            k = self.addresses.index(address)
        except ValueError:
            return 0.0
        return float(self.values[k])

    def l1(self) -> float:
        return math.fsum(self.values.tolist())

    def require_converged(self) -> "ReputationVector":
        if not self.converged:
            raise NotConvergedError(self)
        return self


def tracerank_power(
    W: TransitionMatrix, s: SeedVector, cfg: SolverConfig | None = None
) -> ReputationVector:
    """Fixed-point iteration ``r <- s + alpha * W^T r`` starting from ``r = s``.

    Stops once the L1 change between iterates is at most ``cfg.tol``. If
    ``cfg.max_iter`` is exhausted the last iterate is returned with
    ``converged=False``.
    """
    cfg = cfg or SolverConfig()
    seeds = s.as_array(W.addresses)
    wt = W.transpose_csr()
    r = seeds.copy()
    residuals: list[float] = []
    for it in range(1, cfg.max_iter + 1):
        nxt = seeds + cfg.alpha * (wt @ r)
        res = math.fsum(np.abs(nxt - r).tolist())
        residuals.append(res)
        r = nxt
        if res <= cfg.tol:
            return ReputationVector(
                W.addresses, r, seeds, it, res, True, tuple(residuals)
            )
    return ReputationVector(
        W.addresses, r, seeds, cfg.max_iter, residuals[-1], False, tuple(residuals)
    )


def tracerank_direct(
    W: TransitionMatrix, s: SeedVector, alpha: float = 0.85
) -> ReputationVector:
    """Solve ``(I - alpha W^T) r = s`` with a dense LU factorization."""
    SolverConfig(alpha=alpha)
    if W.n > DENSE_LIMIT:
        raise DenseLimitError(
            f"{W.n} addresses exceeds the dense solve limit of {DENSE_LIMIT}"
        )
    seeds = s.as_array(W.addresses)
    if W.n == 0:
        return ReputationVector((), seeds, seeds, 0, 0.0)
    a = np.eye(W.n) - alpha * W.to_dense().T
    r = np.linalg.solve(a, seeds)
    res = math.fsum(np.abs(a @ r - seeds).tolist())
    return ReputationVector(W.addresses, r, seeds, 1, res)


@dataclass(frozen=True)
class SybilReport:
    address: str
    score: float
    own_seed: float
    direct_payers: int
    upstream_addresses: int
    reachable_seed_mass: float

    @property
    def zero_mass(self) -> bool:
        return self.reachable_seed_mass == 0.0

    @property
    def consistent(self) -> bool:
        """A service with no seeded ancestor must score exactly zero."""
        return not self.zero_mass or self.score == 0.0


def sybil_check(
    service: str,
    W: TransitionMatrix,
    s: SeedVector,
    cfg: SolverConfig | None = None,
    result: ReputationVector | None = None,
) -> SybilReport:
    """Report a service's score and the seed mass that can flow into it.

    The upstream set is every address with a positive-weight path into
    ``service``, plus the service itself.
    """
    idx = W.index
    if service not in idx:
        raise KeyError(f"unknown address {service!r}")
    if result is None:
        result = tracerank_power(W, s, cfg)
    target = idx[service]
    wt = W.transpose_csr()
    seen = {target}
    queue = deque([target])
    while queue:
        i = queue.popleft()
        for j in wt.indices[wt.indptr[i] : wt.indptr[i + 1]].tolist():
            if j not in seen:
                seen.add(j)
                queue.append(j)
    mass = math.fsum(s.get(W.addresses[k]) for k in sorted(seen))
    return SybilReport(
        address=service,
        score=result.score(service),
        own_seed=s.get(service),
        direct_payers=int(wt.indptr[target + 1] - wt.indptr[target]),
        upstream_addresses=len(seen) - 1,
        reachable_seed_mass=mass,
    )
