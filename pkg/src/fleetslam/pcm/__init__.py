from .consistency import (
    CandidateLoop,
    ConsistencyGraph,
    OdometryChains,
    PcmConfig,
    odometry_consistency_filter,
    pairwise_consistent,
)
from .clique import (
    CliqueResult,
    brute_force_max_clique,
    max_clique_batch,
    max_clique_incremental,
)

__all__ = [
    "CandidateLoop",
    "ConsistencyGraph",
    "OdometryChains",
    "PcmConfig",
    "odometry_consistency_filter",
    "pairwise_consistent",
    "CliqueResult",
    "brute_force_max_clique",
    "max_clique_batch",
    "max_clique_incremental",
]
