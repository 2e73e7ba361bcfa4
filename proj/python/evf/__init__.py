"""Elastic vision FFN: routing, capacity allocation and a micro transformer."""

from ._evf import (
    AllocationPlan,
    CapacityConfig,
    ConfigError,
    ContractError,
    DimensionError,
    EmptyBatchError,
    FixtureParseError,
    MicroModel,
    ModalityTags,
    NumericError,
    RoutingDecision,
    Strategy,
    allocate,
    allocate_trace,
    allocation_stats,
    aux_loss,
    compute_capacity,
    decision_from_logits,
    dispatch,
    matmul,
    mix_seed,
    parse_strategy,
    priority_scores,
    redistribute,
    route,
    softmax_rows,
    total_loss,
    train,
)

__version__ = "0.1.0"
