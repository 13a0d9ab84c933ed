"""Point estimation for posterior partition distributions.

Given Monte Carlo samples of clusterings (e.g. MCMC draws from a Bayesian
mixture or random-partition model), this package finds the single partition
minimizing the estimated posterior expected loss under a family of partition
losses, using a stochastic greedy search over cluster allocations backed by
incrementally-maintained contingency tables.
"""

from .baselines import (
    ENUMERATION_CAP,
    SyntheticSpec,
    brute_force_minimizer,
    draws_method,
    enumerate_partitions,
    map_estimate,
    synthetic_draws,
)
from .engine import (
    RunDiagnostics,
    RunState,
    SalsoConfig,
    SalsoResult,
    derive_run_seed,
    initialize_random,
    initialize_sequential,
    mix64,
    resolve_max_clusters,
    run_once,
    salso,
    sweeten,
    zealous_phase,
)
from .losses import (
    KINDS,
    EntropySummary,
    LossSpec,
    VilbCache,
    allocation_scores,
    binder_loss,
    entropy_summary,
    expected_loss,
    expected_loss_batch,
    gvi_loss,
    info_distance_losses,
    omari_loss,
    partition_loss,
    psm_criterion,
    vi_criteria,
)
from .partitions import (
    NEW_CLUSTER,
    CacheCorruptionError,
    ContingencyTable,
    DrawsMatrix,
    TableCache,
    apply_move,
    build_contingency,
    build_psm,
    canonicalize,
    is_canonical,
    num_clusters,
)

__version__ = "0.1.0"

__all__ = [
    "ENUMERATION_CAP",
    "CacheCorruptionError",
    "ContingencyTable",
    "DrawsMatrix",
    "EntropySummary",
    "KINDS",
    "LossSpec",
    "NEW_CLUSTER",
    "RunDiagnostics",
    "RunState",
    "SalsoConfig",
    "SalsoResult",
    "SyntheticSpec",
    "TableCache",
    "VilbCache",
    "allocation_scores",
    "apply_move",
    "binder_loss",
    "brute_force_minimizer",
    "build_contingency",
    "build_psm",
    "canonicalize",
    "derive_run_seed",
    "draws_method",
    "entropy_summary",
    "enumerate_partitions",
    "expected_loss",
    "expected_loss_batch",
    "gvi_loss",
    "info_distance_losses",
    "initialize_random",
    "initialize_sequential",
    "is_canonical",
    "map_estimate",
    "mix64",
    "num_clusters",
    "omari_loss",
    "partition_loss",
    "psm_criterion",
    "resolve_max_clusters",
    "run_once",
    "salso",
    "sweeten",
    "synthetic_draws",
    "vi_criteria",
    "zealous_phase",
    "__version__",
]
