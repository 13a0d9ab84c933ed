"""Partition loss functions and Monte Carlo expected-loss machinery.

Conventions used throughout:

* Entropies and information are in bits (base-2 logs), with 0*log2(0) = 0.
* Loss arguments are ordered (truth, estimate): contingency-table rows index
  the truth (a posterior draw), columns the candidate estimate.
* The Binder loss is reported on its item-count-invariant scale, i.e. the
  classic pairwise-disagreement sum times 2/n^2, so values are comparable
  across item counts.  The information-based losses are n-invariant already.
* Expected losses average per-draw losses with a fixed, deterministic
  reduction order, so results are bit-for-bit reproducible for a given draws
  matrix regardless of worker counts.

Two evaluation routes are provided and kept deliberately simple to cross
check against each other: scalar losses on a single ``ContingencyTable``, and
stacked evaluation over many tables at once (used by the expected-loss paths
and the exhaustive baselines).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .partitions import (
    CacheCorruptionError,
    ContingencyTable,
    DrawsMatrix,
    TableCache,
    canonicalize,
)

# Loss families understood by LossSpec.  "one_zero" is the 0-1 loss whose
# minimizer is the posterior mode; "vilb" is the similarity-matrix lower bound
# on expected variation of information (see vi_criteria / VilbCache).
KINDS = frozenset(
    {"binder", "omari", "vi", "gvi", "nvi", "nid", "id", "vilb", "one_zero"}
)

# Kinds computable from a contingency table (everything except vilb/one_zero).
TABLE_KINDS = frozenset({"binder", "omari", "vi", "gvi", "nvi", "nid", "id"})

# Kinds with a shortcut allocation score; the rest are scored by evaluating
# the full expected loss of each candidate placement.
_FAST_KINDS = frozenset({"binder", "vi", "gvi"})


@dataclass(frozen=True)
class LossSpec:
    """A loss family plus its misclassification weights.

    ``a`` weighs keeping together items the truth separates is wrong -- more
    precisely, ``a`` penalizes splitting items the truth joins and ``b``
    penalizes joining items the truth separates.  The weights are meaningful
    for "binder" and "gvi" only; the other kinds ignore them.
    """

    kind: str
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {sorted(KINDS)}")
        a = float(self.a)
        b = float(self.b)
        if not (np.isfinite(a) and a > 0.0):
            raise ValueError(f"weight a must be finite and positive, got {self.a}")
        if not (np.isfinite(b) and b > 0.0):
            raise ValueError(f"weight b must be finite and positive, got {self.b}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    def weights(self) -> tuple[float, float]:
        """Effective (a, b): the given weights for binder/gvi, (1, 1) otherwise."""
        if self.kind in ("binder", "gvi"):
            return self.a, self.b
        return 1.0, 1.0


@dataclass(frozen=True)
class EntropySummary:
    """Entropies (bits) of the two margins and the joint, plus mutual information."""

    h_rho: float
    h_rhohat: float
    h_joint: float
    mutual_info: float


def _xlogx(values: np.ndarray) -> np.ndarray:
    """Elementwise x*log2(x) with the 0*log2(0) = 0 convention."""
    arr = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(arr)
    mask = arr > 0
    out[mask] = arr[mask] * np.log2(arr[mask])
    return out


def _entropy_bits(counts: np.ndarray, total: int, axis) -> np.ndarray:
    """Shannon entropy in bits of count vectors along ``axis``."""
    p = np.asarray(counts, dtype=np.float64) / total
    return -_xlogx(p).sum(axis=axis)


def entropy_summary(table: ContingencyTable) -> EntropySummary:
    """Marginal and joint entropies of the two partitions a table cross-tabulates."""
    n = table.n
    h_rho = float(_entropy_bits(table.row_sums, n, axis=None))
    h_rhohat = float(_entropy_bits(table.col_sums, n, axis=None))
    h_joint = float(_entropy_bits(table.counts, n, axis=None))
    return EntropySummary(h_rho, h_rhohat, h_joint, h_rho + h_rhohat - h_joint)


def binder_loss(table: ContingencyTable, a: float = 1.0, b: float = 1.0) -> float:
    """Binder loss on the n-invariant scale.

    Computed from the table as (a*(Qr - Qx) + b*(Qc - Qx)) / n^2 where Qr, Qc,
    Qx are the sums of squared row sums, column sums, and cells.  Both inner
    differences are nonnegative integers, so the loss is exactly zero if and
    only if the two partitions are equal.
    """
    if a <= 0 or b <= 0:
        raise ValueError("weights a and b must be positive")
    qr = int(np.square(table.row_sums).sum())
    qc = int(np.square(table.col_sums).sum())
    qx = int(np.square(table.counts).sum())
    n = table.n
    return (a * (qr - qx) + b * (qc - qx)) / (n * n)


def gvi_loss(table: ContingencyTable, a: float = 1.0, b: float = 1.0) -> float:
    """Generalized variation of information, in bits.

    Equals b*H(rho | rhohat) + a*H(rhohat | rho); with a = b = 1 this is the
    plain variation of information.  Each conditional entropy is accumulated
    as per-column (per-row) concavity gaps of x*log2(x), which are individually
    nonnegative and exactly zero for equal partitions.
    """
    if a <= 0 or b <= 0:
        raise ValueError("weights a and b must be positive")
    cells_g = _xlogx(table.counts)
    col_gaps = _xlogx(table.col_sums) - cells_g.sum(axis=0)
    row_gaps = _xlogx(table.row_sums) - cells_g.sum(axis=1)
    return (b * col_gaps.sum() + a * row_gaps.sum()) / table.n


def info_distance_losses(table: ContingencyTable) -> tuple[float, float, float]:
    """Normalized VI, normalized information distance, and information distance.

    Returns (nvi, nid, id) in bits where applicable.  Degenerate denominators
    (both partitions trivial) are defined as zero distance.
    """
    n = table.n
    cells_g = _xlogx(table.counts)
    col_gap = float(_xlogx(table.col_sums).sum() - cells_g.sum())
    row_gap = float(_xlogx(table.row_sums).sum() - cells_g.sum())
    # col_gap = n*H(rho|rhohat), row_gap = n*H(rhohat|rho); both >= 0.
    col_gap = max(col_gap, 0.0)
    row_gap = max(row_gap, 0.0)
    vi = (col_gap + row_gap) / n
    dist = max(col_gap, row_gap) / n
    h_rho = float(_entropy_bits(table.row_sums, n, axis=None))
    h_rhohat = float(_entropy_bits(table.col_sums, n, axis=None))
    h_joint = float(_entropy_bits(table.counts, n, axis=None))
    nvi = min(max(vi / h_joint, 0.0), 1.0) if h_joint > 0.0 else 0.0
    h_max = max(h_rho, h_rhohat)
    nid = min(max(dist / h_max, 0.0), 1.0) if h_max > 0.0 else 0.0
    return nvi, nid, dist


def omari_loss(table: ContingencyTable) -> float:
    """One minus the adjusted Rand index; values lie in [0, 2].

    When the adjustment term degenerates (both partitions all-singletons or
    both single-cluster) the index is taken as 1, i.e. zero loss.
    """
    n = table.n
    if n < 2:
        raise ValueError("the adjusted Rand index needs at least two items")

    def _c2(arr):
        v = np.asarray(arr, dtype=np.int64)
        return int((v * (v - 1) // 2).sum())

    sx = _c2(table.counts)
    sr = _c2(table.row_sums)
    sc = _c2(table.col_sums)
    cn2 = n * (n - 1) // 2
    if cn2 * (sr + sc) == 2 * sr * sc:
        return 0.0
    expected = sr * sc / cn2
    ari = (sx - expected) / (0.5 * (sr + sc) - expected)
    return 1.0 - ari


# ---------------------------------------------------------------------------
# Stacked evaluation: losses for many (truth, estimate) tables at once.
# ---------------------------------------------------------------------------


def _stacked_losses(cells, row_sums, col_sums, total, spec: LossSpec) -> np.ndarray:
    """Per-table losses for stacked count arrays.

    ``cells`` has shape (..., R, C); ``row_sums`` (..., R) and ``col_sums``
    (..., C) must broadcast against it.  ``total`` is the shared item count.
    Returns a float array of shape (...).
    """
    kind = spec.kind
    a, b = spec.weights()
    if kind == "binder":
        qr = np.square(row_sums).sum(axis=-1)
        qc = np.square(col_sums).sum(axis=-1)
        qx = np.square(cells).sum(axis=(-2, -1))
        return (a * (qr - qx) + b * (qc - qx)) / float(total * total)
    if kind in ("vi", "gvi"):
        cells_g = _xlogx(cells)
        col_gap = (_xlogx(col_sums) - cells_g.sum(axis=-2)).sum(axis=-1)
        row_gap = (_xlogx(row_sums) - cells_g.sum(axis=-1)).sum(axis=-1)
        return (b * col_gap + a * row_gap) / total
    if kind in ("nvi", "nid", "id"):
        cells_g_total = _xlogx(cells).sum(axis=(-2, -1))
        col_gap = np.maximum(_xlogx(col_sums).sum(axis=-1) - cells_g_total, 0.0)
        row_gap = np.maximum(_xlogx(row_sums).sum(axis=-1) - cells_g_total, 0.0)
        if kind == "id":
            return np.maximum(col_gap, row_gap) / total
        if kind == "nvi":
            h_joint = _entropy_bits(cells, total, axis=(-2, -1))
            vi = (col_gap + row_gap) / total
            with np.errstate(divide="ignore", invalid="ignore"):
                out = np.where(h_joint > 0.0, vi / np.maximum(h_joint, 1e-300), 0.0)
            return np.clip(out, 0.0, 1.0)
        h_rho = _entropy_bits(row_sums, total, axis=-1)
        h_rhohat = _entropy_bits(col_sums, total, axis=-1)
        h_max = np.maximum(h_rho, h_rhohat)
        dist = np.maximum(col_gap, row_gap) / total
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(h_max > 0.0, dist / np.maximum(h_max, 1e-300), 0.0)
        return np.clip(out, 0.0, 1.0)
    if kind == "omari":
        if total < 2:
            raise ValueError("the adjusted Rand index needs at least two items")

        def _c2(arr):
            v = np.asarray(arr, dtype=np.int64)
            return v * (v - 1) // 2

        sx = _c2(cells).sum(axis=(-2, -1))
        sr = _c2(row_sums).sum(axis=-1)
        sc = _c2(col_sums).sum(axis=-1)
        cn2 = total * (total - 1) // 2
        degenerate = cn2 * (sr + sc) == 2 * sr * sc
        expected = sr * sc / float(cn2)
        denom = 0.5 * (sr + sc) - expected
        with np.errstate(divide="ignore", invalid="ignore"):
            ari = (sx - expected) / np.where(degenerate, 1.0, denom)
        return np.where(degenerate, 0.0, 1.0 - ari)
    raise ValueError(f"loss kind {kind!r} is not a contingency-table loss")


def partition_loss(table: ContingencyTable, spec: LossSpec) -> float:
    """Evaluate one table under any contingency-table loss kind."""
    if spec.kind == "binder":
        return binder_loss(table, spec.a, spec.b)
    if spec.kind == "vi":
        return gvi_loss(table, 1.0, 1.0)
    if spec.kind == "gvi":
        return gvi_loss(table, spec.a, spec.b)
    if spec.kind == "omari":
        return omari_loss(table)
    if spec.kind in ("nvi", "nid", "id"):
        nvi, nid, dist = info_distance_losses(table)
        return {"nvi": nvi, "nid": nid, "id": dist}[spec.kind]
    raise ValueError(f"loss kind {spec.kind!r} is not a contingency-table loss")


def _cache_per_draw_losses(cache: TableCache, spec: LossSpec) -> np.ndarray:
    """Per-draw losses of the cache's current candidate (partial sets allowed)."""
    q = max(cache.n_cols, 1)
    cells = cache.counts[:, :, :q]
    return _stacked_losses(cells, cache.row_sums, cache.col_sums[:q], cache.m, spec)


def expected_loss(source, candidate, spec: LossSpec) -> float:
    """Monte Carlo expected loss of a candidate partition over posterior draws.

    ``source`` is a ``DrawsMatrix`` or a fully-allocated ``TableCache``;
    when a cache is given, ``candidate`` may be None (the cache's candidate is
    used) or must describe the same partition.  For "one_zero" the value is
    one minus the fraction of draws exactly equal to the candidate after
    canonicalization.  The "vilb" criterion is not a per-draw expectation;
    request it through :func:`vi_criteria`.
    """
    if spec.kind == "vilb":
        raise ValueError("vilb is a similarity-matrix criterion; use vi_criteria")
    if isinstance(source, TableCache):
        cache = source
        if cache.m != cache.n_items:
            raise ValueError("expected_loss needs a fully-allocated cache")
        if candidate is not None:
            want = canonicalize(candidate)
            if not np.array_equal(want, cache.candidate_labels()):
                raise ValueError("candidate does not match the cache's partition")
        if spec.kind == "one_zero":
            cand = cache.candidate_labels()
            eq = np.all(cache.draws.labels == cand[None, :], axis=1)
            return float(1.0 - eq.mean())
        return float(_cache_per_draw_losses(cache, spec).mean())
    if isinstance(source, DrawsMatrix):
        cand = canonicalize(candidate)
        if cand.size != source.n_items:
            raise ValueError(
                f"candidate has {cand.size} items, draws have {source.n_items}"
            )
        if spec.kind == "one_zero":
            eq = np.all(source.labels == cand[None, :], axis=1)
            return float(1.0 - eq.mean())
        return float(expected_loss_batch(source, cand[None, :], spec)[0])
    raise ValueError("source must be a DrawsMatrix or TableCache")


def expected_loss_batch(
    draws: DrawsMatrix, candidates, spec: LossSpec, chunk: int = 512
) -> np.ndarray:
    """Expected losses of many candidate partitions at once.

    ``candidates`` is a (B, n) integer array; rows need not be canonical.
    Returns a (B,) float array, bit-identical to calling
    :func:`expected_loss` per row.
    """
    if spec.kind == "vilb":
        raise ValueError("vilb is a similarity-matrix criterion; use vi_criteria")
    cand = np.asarray(candidates)
    if cand.ndim != 2 or cand.shape[1] != draws.n_items:
        raise ValueError(
            f"candidates must have shape (B, {draws.n_items}), got {cand.shape}"
        )
    caps = np.maximum.accumulate(cand, axis=1)
    canonical = (
        np.issubdtype(cand.dtype, np.integer)
        and bool(np.all(cand[:, 0] == 1))
        and bool(np.all(cand >= 1))
        and bool(np.all(cand[:, 1:] <= caps[:, :-1] + 1))
    )
    if canonical:
        cand = cand.astype(np.int64, copy=False)
    else:
        cand = np.vstack([canonicalize(row) for row in cand])
    n_batch = cand.shape[0]
    rows0 = draws.labels - 1
    h, n = rows0.shape
    if spec.kind == "one_zero":
        out = np.empty(n_batch, dtype=np.float64)
        for lo in range(0, n_batch, chunk):
            blk = cand[lo : lo + chunk]
            eq = np.all(draws.labels[None, :, :] == blk[:, None, :], axis=2)
            out[lo : lo + blk.shape[0]] = 1.0 - eq.mean(axis=1)
        return out
    r = draws.k_h
    row_sums = np.zeros((h, r), dtype=np.int64)
    for hh in range(h):
        row_sums[hh] = np.bincount(rows0[hh], minlength=r)
    h_col = np.arange(h)[:, None] * r + rows0  # (h, n): flattened (draw, row) ids
    out = np.empty(n_batch, dtype=np.float64)
    # Candidates are evaluated grouped by cluster count, so each table gets
    # exactly its candidate's width: summation order (hence every last bit)
    # then matches a one-candidate evaluation.
    n_clusters = cand.max(axis=1)
    for c in np.unique(n_clusters):
        group = np.flatnonzero(n_clusters == c)
        c = int(c)
        for lo in range(0, group.size, chunk):
            sel = group[lo : lo + chunk]
            blk = cand[sel] - 1
            bsz = blk.shape[0]
            flat = (
                np.arange(bsz)[:, None, None] * (h * r) + h_col[None, :, :]
            ) * c + blk[:, None, :]
            cells = np.bincount(flat.ravel(), minlength=bsz * h * r * c).reshape(
                bsz, h, r, c
            )
            col_sums = np.zeros((bsz, c), dtype=np.int64)
            for i in range(bsz):
                col_sums[i] = np.bincount(blk[i], minlength=c)
            losses = _stacked_losses(
                cells, row_sums[None, :, :], col_sums[:, None, :], n, spec
            )
            out[sel] = losses.mean(axis=1)
    return out


# ---------------------------------------------------------------------------
# Variation-of-information criteria over draws and the similarity matrix.
# ---------------------------------------------------------------------------


def vi_criteria(draws: DrawsMatrix, psm, candidate) -> tuple[float, float]:
    """Exact expected-VI search criterion and its Jensen lower bound.

    The exact criterion is, up to a candidate-independent affine map, the
    expected variation of information of the candidate:

        sum_i log2 |C(i)|  -  2 * avg_h sum_i log2 |C(i) & D_h(i)|

    where C(i) is the candidate cluster of item i and D_h(i) its cluster in
    draw h.  The lower bound replaces the inner count with its posterior mean,
    i.e. the similarity-matrix row sums over C(i); by Jensen's inequality (the
    log is concave) the bound never exceeds the exact criterion.  Both are
    measured in bits and are minimized over candidates.
    """
    psm = np.asarray(psm, dtype=np.float64)
    c0 = canonicalize(candidate) - 1
    n = draws.n_items
    if c0.size != n:
        raise ValueError(f"candidate has {c0.size} items, draws have {n}")
    if psm.shape != (n, n):
        raise ValueError(f"similarity matrix must be {n}x{n}, got {psm.shape}")
    sizes = np.bincount(c0)
    size_term = float(np.log2(sizes[c0]).sum())
    rows0 = draws.labels - 1
    h, _ = rows0.shape
    r = draws.k_h
    c = int(c0.max()) + 1
    flat = (np.arange(h)[:, None] * r + rows0) * c + c0[None, :]
    cells = np.bincount(flat.ravel(), minlength=h * r * c).reshape(h, r, c)
    item_cells = cells[np.arange(h)[:, None], rows0, c0[None, :]]  # (h, n)
    exact = size_term - 2.0 * float(np.log2(item_cells).sum(axis=1).mean())
    same = c0[:, None] == c0[None, :]
    inner = (psm * same).sum(axis=1)
    lower = size_term - 2.0 * float(np.log2(inner).sum())
    return exact, lower


def psm_criterion(psm, candidate, kind: str, a: float = 1.0, b: float = 1.0) -> float:
    """Search criteria defined directly on the posterior similarity matrix.

    ``kind`` is "lau_green" (maximize): the sum over co-clustered pairs of
    (similarity - b/(a+b)); or "least_squares" (minimize): the squared
    Frobenius distance between the candidate's co-clustering indicator matrix
    and the similarity matrix.
    """
    psm = np.asarray(psm, dtype=np.float64)
    c0 = canonicalize(candidate) - 1
    n = c0.size
    if psm.shape != (n, n):
        raise ValueError(f"similarity matrix must be {n}x{n}, got {psm.shape}")
    same = c0[:, None] == c0[None, :]
    if kind == "lau_green":
        if a <= 0 or b <= 0:
            raise ValueError("weights a and b must be positive")
        thresh = b / (a + b)
        off = same & ~np.eye(n, dtype=bool)
        return float(((psm - thresh) * off).sum() / 2.0)
    if kind == "least_squares":
        return float(np.square(same.astype(np.float64) - psm).sum())
    raise ValueError(f"unknown similarity-matrix criterion {kind!r}")


# ---------------------------------------------------------------------------
# Allocation scores: rank candidate placements for one deallocated item.
# ---------------------------------------------------------------------------


def allocation_scores(
    cache: TableCache, item: int, spec: LossSpec, allow_new: bool = True
) -> np.ndarray:
    """Scores for placing a deallocated item in each active column (+ new).

    Returns one score per active column, in column order, plus a final score
    for opening a new cluster when ``allow_new``.  The guarantee is argmin
    equivalence: the index of the smallest score is the index of the placement
    minimizing the Monte Carlo expected loss over the currently allocated
    items.  For "binder", "vi", and "gvi" the scores are shortcut sums that
    differ from expected losses by a candidate-independent constant; for the
    remaining table kinds the scores are the expected losses themselves.
    """
    n = cache.n_items
    if not 0 <= item < n:
        raise ValueError(f"item {item} out of range for {n} items")
    if cache.assign[item] != -1:
        raise CacheCorruptionError(f"item {item} must be deallocated before scoring")
    q = cache.n_cols
    if q == 0 and not allow_new:
        raise ValueError("no candidate placements: no columns and allow_new=False")
    if spec.kind in ("one_zero", "vilb"):
        raise ValueError(f"loss kind {spec.kind!r} has no table-based allocation score")
    h = cache.n_draws
    r = cache._rows0[:, item]
    h_idx = cache._h_idx
    cells = cache.counts[h_idx, r, :q]  # (h, q): item's truth-row counts per column
    cols = cache.col_sums[:q]
    a, b = spec.weights()
    if spec.kind == "binder":
        scores = b * h * cols - (a + b) * cells.sum(axis=0)
        scores = scores.astype(np.float64)
        return np.append(scores, 0.0) if allow_new else scores
    if spec.kind in ("vi", "gvi"):
        step = cache.xlogx_step
        scores = b * h * step[cols + 1] - (a + b) * step[cells + 1].sum(axis=0)
        return np.append(scores, 0.0) if allow_new else scores

    # Generic kinds: exact expected loss of each tentative placement, built
    # from the deallocated state plus the four-count delta of the placement.
    total = cache.m + 1
    n_scores = q + 1 if allow_new else q
    out = np.empty(n_scores, dtype=np.float64)
    rows_v = cache.row_sums[h_idx, r]  # (h,) item's truth-row sums, candidate-free
    cells_list = [cells[:, j] for j in range(q)]
    col_list = [int(cols[j]) for j in range(q)]
    if allow_new:
        cells_list.append(np.zeros(h, dtype=np.int64))
        col_list.append(0)
    if spec.kind == "omari":
        if total < 2:
            return np.zeros(n_scores, dtype=np.float64)

        def _c2(v):
            return v * (v - 1) // 2

        cx0 = _c2(cache.counts[:, :, :q]).sum(axis=(1, 2))
        cr0 = _c2(cache.row_sums).sum(axis=1) + rows_v
        cc0 = int(_c2(cols).sum())
        cn2 = total * (total - 1) // 2
        for j, (cell, csz) in enumerate(zip(cells_list, col_list)):
            sx = cx0 + cell
            sr = cr0
            sc = cc0 + csz
            degenerate = cn2 * (sr + sc) == 2 * sr * sc
            expected = sr * sc / float(cn2)
            denom = 0.5 * (sr + sc) - expected
            with np.errstate(divide="ignore", invalid="ignore"):
                loss = np.where(degenerate, 0.0, 1.0 - (sx - expected) / np.where(degenerate, 1.0, denom))
            out[j] = loss.mean()
        return out
    # Entropy-based generic kinds: nvi, nid, id.
    g = cache.xlogx
    sx0 = g[cache.counts[:, :, :q]].sum(axis=(1, 2))
    sr_new = g[cache.row_sums].sum(axis=1) + g[rows_v + 1] - g[rows_v]
    sc0 = float(g[cols].sum())
    log_t = np.log2(total) if total > 1 else 0.0
    for j, (cell, csz) in enumerate(zip(cells_list, col_list)):
        sx = sx0 + g[cell + 1] - g[cell]
        sc = sc0 + float(g[csz + 1] - g[csz])
        col_gap = np.maximum(sc - sx, 0.0)
        row_gap = np.maximum(sr_new - sx, 0.0)
        if spec.kind == "id":
            out[j] = (np.maximum(col_gap, row_gap) / total).mean()
            continue
        if spec.kind == "nvi":
            h_joint = log_t - sx / total
            vi = (col_gap + row_gap) / total
            vals = np.where(h_joint > 1e-300, vi / np.maximum(h_joint, 1e-300), 0.0)
        else:  # nid
            h_rho = log_t - sr_new / total
            h_rhohat = log_t - sc / total
            h_max = np.maximum(h_rho, h_rhohat)
            dist = np.maximum(col_gap, row_gap) / total
            vals = np.where(h_max > 1e-300, dist / np.maximum(h_max, 1e-300), 0.0)
        out[j] = np.clip(vals, 0.0, 1.0).mean()
    return out


# ---------------------------------------------------------------------------
# Incremental state for minimizing the expected-VI lower bound ("vilb").
# ---------------------------------------------------------------------------


class VilbCache:
    """Evolving-candidate state for the similarity-matrix VI lower bound.

    Mirrors the column discipline of ``TableCache`` (active columns
    0..n_cols-1, explicit compaction) but keeps, instead of contingency
    tables, each allocated item's within-cluster similarity sum (including
    itself).  That is enough to score single-item placements in time
    proportional to the receiving cluster's size.
    """

    def __init__(self, psm, max_cols: int):
        psm = np.asarray(psm, dtype=np.float64)
        if psm.ndim != 2 or psm.shape[0] != psm.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {psm.shape}")
        if max_cols < 1:
            raise ValueError("max_cols must be at least 1")
        self.psm = psm
        n = psm.shape[0]
        self.assign = np.full(n, -1, dtype=np.int64)
        self.col_sums = np.zeros(max_cols, dtype=np.int64)
        self.n_cols = 0
        self.m = 0
        self.s = np.zeros(n, dtype=np.float64)  # within-cluster similarity sums

    @property
    def n_items(self) -> int:
        return self.assign.size

    @property
    def capacity(self) -> int:
        return self.col_sums.size

    def load_candidate(self, labels) -> None:
        e0 = canonicalize(labels) - 1
        if e0.size != self.n_items:
            raise ValueError(f"candidate has {e0.size} items, expected {self.n_items}")
        q = int(e0.max()) + 1
        if q > self.capacity:
            raise CacheCorruptionError(f"candidate needs {q} columns, capacity {self.capacity}")
        self.assign[...] = e0
        self.col_sums[...] = 0
        self.col_sums[:q] = np.bincount(e0, minlength=q)
        self.n_cols = q
        self.m = self.n_items
        self.s[...] = 0.0
        for j in range(q):
            mem = np.flatnonzero(e0 == j)
            self.s[mem] = self.psm[np.ix_(mem, mem)].sum(axis=1)

    def allocate(self, item: int, col: int) -> None:
        if self.assign[item] != -1:
            raise CacheCorruptionError(f"item {item} is already allocated")
        if not 0 <= col < self.n_cols:
            raise CacheCorruptionError(f"column {col} is not active")
        mem = np.flatnonzero(self.assign == col)
        self.s[mem] += self.psm[mem, item]
        self.s[item] = float(self.psm[item, mem].sum()) + 1.0
        self.assign[item] = col
        self.col_sums[col] += 1
        self.m += 1

    def deallocate(self, item: int) -> int:
        col = int(self.assign[item])
        if col == -1:
            raise CacheCorruptionError(f"item {item} is already deallocated")
        self.assign[item] = -1
        mem = np.flatnonzero(self.assign == col)
        self.s[mem] -= self.psm[mem, item]
        self.s[item] = 0.0
        self.col_sums[col] -= 1
        self.m -= 1
        return col

    def new_column(self) -> int:
        if self.n_cols >= self.capacity:
            raise CacheCorruptionError("column capacity exhausted")
        col = self.n_cols
        self.n_cols += 1
        return col

    def compact_column(self, col: int) -> None:
        if not 0 <= col < self.n_cols:
            raise CacheCorruptionError(f"column {col} is not active")
        if self.col_sums[col] != 0:
            raise CacheCorruptionError(f"column {col} is not empty")
        last = self.n_cols - 1
        if col != last:
            self.col_sums[col] = self.col_sums[last]
            self.col_sums[last] = 0
            self.assign[self.assign == last] = col
        self.n_cols = last

    def scores(self, item: int, allow_new: bool = True) -> np.ndarray:
        """Criterion deltas for placing ``item`` in each column (+ new = 0)."""
        if self.assign[item] != -1:
            raise CacheCorruptionError(f"item {item} must be deallocated before scoring")
        prow = self.psm[item]
        q = self.n_cols
        out = np.empty(q + 1 if allow_new else q, dtype=np.float64)
        for j in range(q):
            mem = np.flatnonzero(self.assign == j)
            sz = mem.size
            cross = prow[mem]
            s_mem = self.s[mem]
            size_term = (sz + 1) * np.log2(sz + 1) - (sz * np.log2(sz) if sz > 0 else 0.0)
            member_term = np.log2((s_mem + cross) / s_mem).sum()
            own_term = np.log2(1.0 + cross.sum())
            out[j] = size_term - 2.0 * (member_term + own_term)
        if allow_new:
            out[q] = 0.0
        return out

    def objective(self) -> float:
        """Criterion value over allocated items, recomputed fresh (drift-free)."""
        total = 0.0
        for j in range(self.n_cols):
            mem = np.flatnonzero(self.assign == j)
            if mem.size == 0:
                continue
            sums = self.psm[np.ix_(mem, mem)].sum(axis=1)
            total += mem.size * np.log2(mem.size) - 2.0 * np.log2(sums).sum()
        return float(total)

    def snapshot(self):
        return (self.assign.copy(), self.col_sums.copy(), self.n_cols, self.m, self.s.copy())

    def restore(self, snap) -> None:
        assign, col_sums, n_cols, m, s = snap
        self.assign[...] = assign
        self.col_sums[...] = col_sums
        self.n_cols = n_cols
        self.m = m
        self.s[...] = s

    def candidate_labels(self) -> np.ndarray:
        if self.m != self.n_items:
            raise CacheCorruptionError(
                f"candidate incomplete: {self.m} of {self.n_items} items allocated"
            )
        return canonicalize(self.assign + 1)
