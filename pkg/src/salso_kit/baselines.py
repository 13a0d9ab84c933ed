"""Reference methods: exhaustive search, draws-restricted search, the posterior
mode, and synthetic draw generators for calibration studies.

The exhaustive minimizer enumerates every partition (optionally bounded in
cluster count) in lexicographic restricted-growth order and evaluates exact
Monte Carlo expected losses in vectorized chunks.  It exists to certify the
greedy search on small instances, so it favors transparency over speed and
refuses item counts beyond a hard cap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .losses import LossSpec, expected_loss_batch
from .partitions import DrawsMatrix, canonicalize

# Largest item count the exhaustive paths accept (Bell(12) is ~4.2 million).
ENUMERATION_CAP = 12


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic posterior: a planted partition plus label noise.

    Each draw starts from the planted partition of ``n_items`` into
    ``k_true`` equal blocks; every item is independently replaced, with
    probability ``noise``, by a uniform label in 1..k_true.
    """

    n_items: int
    k_true: int
    n_draws: int
    noise: float
    seed: int = 0

    def __post_init__(self):
        if self.n_items < 1:
            raise ValueError(f"n_items must be positive, got {self.n_items}")
        if not 1 <= self.k_true <= self.n_items:
            raise ValueError(
                f"k_true must lie in 1..{self.n_items}, got {self.k_true}"
            )
        if self.n_draws < 1:
            raise ValueError(f"n_draws must be positive, got {self.n_draws}")
        if not 0.0 <= float(self.noise) <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {self.noise}")


def synthetic_draws(spec: SyntheticSpec) -> DrawsMatrix:
    """Generate the draws matrix a :class:`SyntheticSpec` describes."""
    rng = np.random.default_rng(spec.seed)
    base = (np.arange(spec.n_items) % spec.k_true) + 1
    flip = rng.random((spec.n_draws, spec.n_items)) < spec.noise
    repl = rng.integers(1, spec.k_true + 1, size=(spec.n_draws, spec.n_items))
    rows = np.where(flip, repl, base[None, :])
    return DrawsMatrix.from_labels(rows)


def enumerate_partitions(
    n: int, max_clusters: int | None = None, cap: int = ENUMERATION_CAP
) -> Iterator[np.ndarray]:
    """Yield every partition of n items as canonical labels, lexicographically.

    Standard restricted-growth enumeration: the successor of a sequence
    increments its rightmost position that can grow (staying within one plus
    the prefix maximum and within ``max_clusters``) and resets the suffix to
    ones.  Yields fresh arrays safe to keep.
    """
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    if n > cap:
        raise ValueError(
            f"refusing to enumerate partitions of {n} items (cap is {cap})"
        )
    kmax = n if max_clusters is None else int(max_clusters)
    if kmax < 1:
        raise ValueError(f"max_clusters must be positive, got {max_clusters}")
    a = [1] * n
    # prefix_max[i] = max(a[:i]); position i may grow to at most prefix_max[i]+1
    prefix_max = [0] + [1] * (n - 1)
    while True:
        yield np.array(a, dtype=np.int64)
        i = n - 1
        while i > 0 and (a[i] > prefix_max[i] or a[i] + 1 > kmax):
            i -= 1
        if i == 0:
            return
        a[i] += 1
        for j in range(i + 1, n):
            prefix_max[j] = max(prefix_max[j - 1], a[j - 1])
            a[j] = 1


def brute_force_minimizer(
    draws: DrawsMatrix,
    spec: LossSpec,
    max_clusters: int | None = None,
    cap: int = ENUMERATION_CAP,
    chunk: int = 512,
    tie_tol: float = 1e-9,
) -> tuple[list[np.ndarray], float]:
    """Exhaustive expected-loss minimization over all partitions.

    Returns (minimizers, min_loss) where ``minimizers`` lists, in enumeration
    order, every partition whose loss is within ``tie_tol`` (relative to the
    loss scale) of the minimum.  The tolerance absorbs the reordering noise of
    float summation; exact ties are the common case.
    """
    n = draws.n_items
    if n > cap:
        raise ValueError(
            f"refusing exhaustive search over {n} items (cap is {cap})"
        )
    best = np.inf
    survivors: list[tuple[np.ndarray, float]] = []
    gen = enumerate_partitions(n, max_clusters=max_clusters, cap=cap)
    while True:
        block = []
        for labels in gen:
            block.append(labels)
            if len(block) >= chunk:
                break
        if not block:
            break
        losses = expected_loss_batch(draws, np.vstack(block), spec, chunk=chunk)
        for labels, loss in zip(block, losses):
            loss = float(loss)
            if loss < best:
                best = loss
            if loss <= best + tie_tol * max(1.0, abs(best)):
                survivors.append((labels, loss))
    tol = tie_tol * max(1.0, abs(best))
    minimizers = [labels for labels, loss in survivors if loss <= best + tol]
    return minimizers, best


def draws_method(draws: DrawsMatrix, spec: LossSpec) -> tuple[np.ndarray, float]:
    """Minimize expected loss over the partitions visited by the draws.

    Ties in loss go to the partition appearing earliest in the draws.
    Fast and always available, but limited to the sampled support.
    """
    uniq, first = np.unique(draws.labels, axis=0, return_index=True)
    losses = expected_loss_batch(draws, uniq, spec)
    order = np.lexsort((first, losses))
    pick = order[0]
    return uniq[pick].copy(), float(losses[pick])


def map_estimate(draws: DrawsMatrix) -> tuple[np.ndarray, float]:
    """Most frequent draw and its relative frequency (the 0-1 loss minimizer).

    Ties in frequency go to the partition appearing earliest in the draws.
    """
    uniq, first, counts = np.unique(
        draws.labels, axis=0, return_index=True, return_counts=True
    )
    order = np.lexsort((first, -counts))
    pick = order[0]
    return uniq[pick].copy(), float(counts[pick] / draws.n_draws)
