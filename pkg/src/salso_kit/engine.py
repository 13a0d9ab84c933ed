"""Stochastic greedy search for the partition minimizing expected loss.

Each run draws its own RNG stream from the master seed, initializes a
candidate (sequential greedy allocation or uniform random labels), then
alternates two improvement phases until a fixed point:

* sweeten -- full passes over the items in random order; each item is pulled
  out of the candidate and re-placed in the best column (or a new one);
* zealous -- whole clusters are destroyed and their items re-placed one at a
  time, keeping the rebuilt candidate only if the objective strictly drops.

All mutation goes through the integer-exact incremental caches, so a run's
recorded loss always equals the loss of its reported partition recomputed
from scratch.  Runs are independent given their derived seeds; the result is
a pure function of (draws, loss, config) regardless of how many worker
threads execute the runs.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .losses import LossSpec, VilbCache, allocation_scores, expected_loss
from .partitions import DrawsMatrix, TableCache, build_psm

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15  # 2^64 / golden ratio, the Weyl increment


def mix64(z: int) -> int:
    """SplitMix64 finalizer: a bijective 64-bit avalanche mix."""
    z &= _MASK64
    z ^= z >> 30
    z = (z * 0xBF58476D1CE4E5B9) & _MASK64
    z ^= z >> 27
    z = (z * 0x94D049BB133111EB) & _MASK64
    z ^= z >> 31
    return z


def derive_run_seed(master_seed: int, run_index: int) -> int:
    """Decorrelated per-run seed; distinct for every (seed, run) pair."""
    if run_index < 0:
        raise ValueError("run_index must be nonnegative")
    return mix64((master_seed & _MASK64) ^ ((_GOLDEN * (run_index + 1)) & _MASK64))


@dataclass(frozen=True)
class SalsoConfig:
    """Tuning knobs for :func:`salso`.

    ``max_clusters`` is the search bound k_d: None means "largest cluster
    count seen in the draws", and any value is clamped to the item count.
    ``n_workers`` = 0 means one worker per CPU core; worker count never
    affects the result, only the wall time.
    """

    n_runs: int = 16
    p_sa: float = 0.5
    max_clusters: int | None = None
    n_max_zealous: int = 10
    max_scans: int = 1000
    seed: int = 0
    n_workers: int = 1

    def __post_init__(self):
        if int(self.n_runs) < 1:
            raise ValueError(f"n_runs must be at least 1, got {self.n_runs}")
        if not 0.0 <= float(self.p_sa) <= 1.0:
            raise ValueError(f"p_sa must lie in [0, 1], got {self.p_sa}")
        if self.max_clusters is not None and int(self.max_clusters) < 1:
            raise ValueError(f"max_clusters must be positive, got {self.max_clusters}")
        if int(self.n_max_zealous) < 0:
            raise ValueError(f"n_max_zealous must be nonnegative, got {self.n_max_zealous}")
        if int(self.max_scans) < 1:
            raise ValueError(f"max_scans must be at least 1, got {self.max_scans}")
        if int(self.n_workers) < 0:
            raise ValueError(f"n_workers must be nonnegative, got {self.n_workers}")


@dataclass(frozen=True)
class RunDiagnostics:
    """What one search run did and where it ended up."""

    run_index: int
    initialization: str
    scans: int
    max_scans_hit: bool
    zealous_attempted: int
    zealous_accepted: int
    expected_loss: float
    n_clusters: int
    wall_ms: float

    def as_dict(self) -> dict:
        return {
            "run_index": self.run_index,
            "initialization": self.initialization,
            "scans": self.scans,
            "max_scans_hit": self.max_scans_hit,
            "zealous_attempted": self.zealous_attempted,
            "zealous_accepted": self.zealous_accepted,
            "expected_loss": self.expected_loss,
            "n_clusters": self.n_clusters,
            "wall_ms": self.wall_ms,
        }


@dataclass(frozen=True)
class SalsoResult:
    """Best partition found, its loss, and per-run diagnostics."""

    estimate: np.ndarray
    expected_loss: float
    spec: LossSpec
    k_d: int
    seed: int
    n_runs: int
    best_run_index: int
    runs: list[RunDiagnostics] = field(repr=False)
    wall_ms: float = 0.0

    @property
    def n_clusters(self) -> int:
        return int(self.estimate.max())

    def as_dict(self) -> dict:
        return {
            "labels": [int(v) for v in self.estimate],
            "n_clusters": self.n_clusters,
            "expected_loss": self.expected_loss,
            "loss": {"kind": self.spec.kind, "a": self.spec.a, "b": self.spec.b},
            "n_runs": self.n_runs,
            "best_run_index": self.best_run_index,
            "seed": self.seed,
            "k_d_resolved": self.k_d,
            "wall_ms": self.wall_ms,
            "runs": [run.as_dict() for run in self.runs],
        }


def resolve_max_clusters(max_clusters: int | None, draws: DrawsMatrix) -> int:
    """The effective search bound k_d for a draws matrix."""
    if max_clusters is None:
        k = draws.k_h
    else:
        k = int(max_clusters)
        if k < 1:
            raise ValueError(f"max_clusters must be positive, got {max_clusters}")
    return min(k, draws.n_items)


class RunState:
    """Mutable state of one search run: evolving candidate plus its cache.

    The candidate is held in a ``TableCache`` (contingency-table losses) or a
    ``VilbCache`` (the similarity-matrix criterion); both expose the same
    column discipline.  ``trace``, when given, receives one record per scoring
    call -- enough to replay every placement decision against a reference.
    """

    def __init__(
        self,
        draws: DrawsMatrix,
        spec: LossSpec,
        k_d: int,
        rng: np.random.Generator,
        max_scans: int = 1000,
        psm: np.ndarray | None = None,
        trace: list | None = None,
    ):
        n = draws.n_items
        if not 1 <= k_d <= n:
            raise ValueError(f"k_d must lie in 1..{n}, got {k_d}")
        if spec.kind == "one_zero":
            raise ValueError(
                "one_zero has no incremental search; use baselines.map_estimate"
            )
        self.draws = draws
        self.spec = spec
        self.k_d = k_d
        self.rng = rng
        self.max_scans = max_scans
        self.trace = trace
        capacity = k_d + 1  # one spare column so a new cluster can be trialed
        if spec.kind == "vilb":
            if psm is None:
                psm = build_psm(draws)
            self.backend = VilbCache(psm, max_cols=capacity)
            self._table = None
        else:
            self.backend = TableCache(draws, max_cols=capacity)
            self._table = self.backend

    @property
    def n_items(self) -> int:
        return self.draws.n_items

    @property
    def n_cols(self) -> int:
        return self.backend.n_cols

    @property
    def m(self) -> int:
        return self.backend.m

    @property
    def assign(self) -> np.ndarray:
        return self.backend.assign

    def load_candidate(self, labels) -> None:
        self.backend.load_candidate(labels)

    def remove_item(self, item: int) -> None:
        """Deallocate an item, compacting its column right away if emptied."""
        col = self.backend.deallocate(item)
        if self.backend.col_sums[col] == 0:
            self.backend.compact_column(col)

    def place_item(self, item: int, slot: int) -> None:
        """Allocate an item into score slot ``slot`` (== n_cols means new)."""
        if slot == self.backend.n_cols:
            col = self.backend.new_column()
        else:
            col = slot
        self.backend.allocate(item, col)

    def scores(self, item: int) -> np.ndarray:
        """Placement scores for a deallocated item; last slot is "new" if open."""
        allow_new = self.backend.n_cols < self.k_d
        if self.spec.kind == "vilb":
            s = self.backend.scores(item, allow_new=allow_new)
        else:
            s = allocation_scores(self.backend, item, self.spec, allow_new=allow_new)
        if self.trace is not None:
            self.trace.append(
                {
                    "item": item,
                    "assign": self.backend.assign.copy(),
                    "n_cols": self.backend.n_cols,
                    "allow_new": allow_new,
                    "scores": s.copy(),
                }
            )
        return s

    def objective(self) -> float:
        """The run's optimization objective, recomputed fresh from the cache."""
        if self.spec.kind == "vilb":
            return self.backend.objective()
        return expected_loss(self.backend, None, self.spec)

    def candidate_labels(self) -> np.ndarray:
        return self.backend.candidate_labels()

    def partition_key(self) -> bytes:
        """Hashable identity of the current (full) candidate partition."""
        return self.candidate_labels().tobytes()

    def snapshot(self):
        return self.backend.snapshot()

    def restore(self, snap) -> None:
        self.backend.restore(snap)


def initialize_sequential(state: RunState) -> None:
    """Greedy sequential allocation in random item order.

    The first item necessarily opens the first cluster; each later item takes
    the best-scoring placement among existing clusters and (while the bound
    k_d allows) a new one.
    """
    for item in state.rng.permutation(state.n_items):
        s = state.scores(int(item))
        state.place_item(int(item), int(np.argmin(s)))


def initialize_random(state: RunState) -> np.ndarray:
    """Uniform random labels in 1..k_d, then canonical compaction.

    Returns the raw labels before compaction (useful for diagnostics); the
    state is loaded with their canonical form.
    """
    raw = state.rng.integers(1, state.k_d + 1, size=state.n_items)
    state.load_candidate(raw)
    return raw


def sweeten(state: RunState) -> tuple[int, bool]:
    """Re-place every item in random order until a full scan changes nothing.

    Returns (scans performed, True if the scan cap stopped the run early).
    """
    for scan in range(1, state.max_scans + 1):
        key = state.partition_key()
        for item in state.rng.permutation(state.n_items):
            state.remove_item(int(item))
            s = state.scores(int(item))
            state.place_item(int(item), int(np.argmin(s)))
        if state.partition_key() == key:
            return scan, False
    return state.max_scans, True


def zealous_phase(state: RunState, n_max_zealous: int) -> tuple[int, int]:
    """Destroy whole clusters and rebuild; keep only strict improvements.

    Clusters are snapshotted at phase entry and visited in random order (at
    most ``n_max_zealous`` of them).  An accepted rebuild changes the
    candidate, so later targets are re-resolved to the current column holding
    the snapshot's items before destruction.  Returns (attempts, accepts).
    """
    if n_max_zealous <= 0 or state.n_cols == 0:
        return 0, 0
    assign = state.assign
    clusters = [np.flatnonzero(assign == j) for j in range(state.n_cols)]
    order = state.rng.permutation(len(clusters))
    attempted = accepted = 0
    for idx in order[:n_max_zealous]:
        items = clusters[int(idx)]
        cols = np.unique(state.assign[items])
        cols = cols[cols >= 0]
        if cols.size == 0:
            continue
        targets = np.flatnonzero(np.isin(state.assign, cols))
        attempted += 1
        snap = state.snapshot()
        before = state.objective()
        for it in targets:
            state.remove_item(int(it))
        for it in state.rng.permutation(targets):
            s = state.scores(int(it))
            state.place_item(int(it), int(np.argmin(s)))
        if state.objective() < before:
            accepted += 1
        else:
            state.restore(snap)
    return attempted, accepted


def run_once(
    draws: DrawsMatrix,
    spec: LossSpec,
    config: SalsoConfig,
    run_index: int,
    psm: np.ndarray | None = None,
    trace: list | None = None,
) -> tuple[np.ndarray, float, RunDiagnostics]:
    """One complete search run; deterministic given (inputs, run_index)."""
    t0 = time.perf_counter()
    k_d = resolve_max_clusters(config.max_clusters, draws)
    rng = np.random.Generator(np.random.PCG64(derive_run_seed(config.seed, run_index)))
    state = RunState(
        draws, spec, k_d, rng, max_scans=config.max_scans, psm=psm, trace=trace
    )
    if rng.random() < config.p_sa:
        initialization = "sequential"
        initialize_sequential(state)
    else:
        initialization = "random"
        initialize_random(state)
    scans, hit_cap = sweeten(state)
    attempted, accepted = zealous_phase(state, config.n_max_zealous)
    if accepted:
        more_scans, more_hit = sweeten(state)
        scans += more_scans
        hit_cap = hit_cap or more_hit
    labels = state.candidate_labels()
    loss = state.objective()
    diag = RunDiagnostics(
        run_index=run_index,
        initialization=initialization,
        scans=scans,
        max_scans_hit=hit_cap,
        zealous_attempted=attempted,
        zealous_accepted=accepted,
        expected_loss=loss,
        n_clusters=int(labels.max()),
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
    return labels, loss, diag


def salso(
    draws: DrawsMatrix, spec: LossSpec, config: SalsoConfig | None = None
) -> SalsoResult:
    """Minimize the Monte Carlo expected loss over partitions by multi-run search.

    Runs ``config.n_runs`` independent searches and returns the best result
    (ties broken toward the lowest run index).  The reported expected loss is
    recomputed from the winning run's cache, never carried incrementally.
    """
    if config is None:
        config = SalsoConfig()
    if not isinstance(draws, DrawsMatrix):
        raise ValueError("salso expects a DrawsMatrix")
    if spec.kind == "one_zero":
        raise ValueError(
            "one_zero is minimized by the most frequent draw; use baselines.map_estimate"
        )
    t0 = time.perf_counter()
    k_d = resolve_max_clusters(config.max_clusters, draws)
    psm = build_psm(draws) if spec.kind == "vilb" else None
    n_workers = config.n_workers if config.n_workers > 0 else (os.cpu_count() or 1)
    n_workers = min(n_workers, config.n_runs)
    results: list[tuple[np.ndarray, float, RunDiagnostics] | None]
    if n_workers <= 1:
        results = [
            run_once(draws, spec, config, r, psm=psm) for r in range(config.n_runs)
        ]
    else:
        results = [None] * config.n_runs
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = {
                pool.submit(run_once, draws, spec, config, r, psm): r
                for r in range(config.n_runs)
            }
            for fut, r in futures.items():
                results[r] = fut.result()
    best = min(range(config.n_runs), key=lambda r: (results[r][1], r))
    labels, loss, _ = results[best]
    return SalsoResult(
        estimate=labels,
        expected_loss=loss,
        spec=spec,
        k_d=k_d,
        seed=config.seed,
        n_runs=config.n_runs,
        best_run_index=best,
        runs=[res[2] for res in results],
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
