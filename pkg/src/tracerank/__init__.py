"""Seeded, value- and time-weighted reputation ranking over payment graphs."""

from .baselines import BaselineScore, count_rank, pagerank_unseeded, volume_rank
from .graph import (
    FlowMatrix,
    IngestError,
    PaymentEdge,
    PaymentGraph,
    TransitionMatrix,
    aggregate_flows,
    ingest_payments,
    load_payments,
    normalize,
)
from .retrieval import (
    QueryFilters,
    RankedResult,
    ServiceIndex,
    ServiceProfile,
    cosine,
    embed_text,
    query,
    query_vector,
)
from .scenarios import Scenario, scenario_spam, scenario_verdict
from .solver import (
    NotConvergedError,
    ReputationVector,
    SeedVector,
    SolverConfig,
    sybil_check,
    tracerank_direct,
    tracerank_power,
)

__version__ = "0.1.0"
