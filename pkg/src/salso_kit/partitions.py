"""Partition labels, contingency tables, and the posterior similarity matrix.

A partition of n items is represented by an integer label vector.  The
canonical form is the restricted-growth form: item 0 carries label 1, and each
later item carries either a label seen before it or the smallest unused label.
Two label vectors describe the same partition exactly when their canonical
forms are equal, so canonical labels double as a partition identity.

The mutable types in this module (``ContingencyTable`` and ``TableCache``)
support O(1)-per-count incremental updates: allocating, deallocating, or
moving a single item touches exactly four counts per table.  They are the
workhorses behind the greedy search in :mod:`salso_kit.engine`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Sentinel column target meaning "append a new, empty cluster column first".
NEW_CLUSTER = -1


class CacheCorruptionError(RuntimeError):
    """An incremental table update was asked to do something structurally
    impossible (move out of an empty cell, reallocate an allocated item, ...).

    This signals a logic error in the caller, not bad user input.
    """


def _as_label_array(raw, name: str = "labels") -> np.ndarray:
    arr = np.asarray(raw)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must contain at least one item")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"{name} must be integers, got dtype {arr.dtype}")
    return arr.astype(np.int64, copy=False)


def canonicalize(raw_labels) -> np.ndarray:
    """Return the canonical 1-based label vector for an arbitrary label vector.

    Clusters are renumbered 1, 2, ... in order of first appearance.  The input
    may use any integers (gaps and negative values are fine).
    """
    arr = _as_label_array(raw_labels)
    _, first, inverse = np.unique(arr, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inverse] + 1


def is_canonical(labels) -> bool:
    """True when ``labels`` is already in canonical restricted-growth form."""
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.size == 0 or not np.issubdtype(arr.dtype, np.integer):
        return False
    if arr[0] != 1:
        return False
    caps = np.maximum.accumulate(arr)
    return bool(np.all(arr[1:] <= caps[:-1] + 1)) and bool(arr.min() >= 1)


def num_clusters(labels) -> int:
    """Number of clusters in a label vector (max label of its canonical form)."""
    return int(np.unique(_as_label_array(labels)).size)


@dataclass(frozen=True, eq=False)
class DrawsMatrix:
    """An H-by-n matrix of posterior partition draws, one canonical row per draw.

    Rows are stored in canonical form, so exact row equality means partition
    equality.  The matrix is read-only after construction and safe to share
    across worker threads.
    """

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"draws must be a 2-d array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("draws need at least one draw and one item")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"draws must be integers, got dtype {arr.dtype}")
        arr = arr.astype(np.int64, copy=True)
        caps = np.maximum.accumulate(arr, axis=1)
        ok = (
            bool(np.all(arr[:, 0] == 1))
            and bool(np.all(arr >= 1))
            and bool(np.all(arr[:, 1:] <= caps[:, :-1] + 1))
        )
        if not ok:
            raise ValueError(
                "draw rows must be canonical labels; use DrawsMatrix.from_labels"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "labels", arr)
        object.__setattr__(self, "_k_h", int(arr.max()))

    @classmethod
    def from_labels(cls, rows) -> "DrawsMatrix":
        """Build a draws matrix from arbitrary integer label rows.

        Each row is canonicalized independently.
        """
        arr = np.asarray(rows)
        if arr.ndim != 2:
            raise ValueError(f"draws must be a 2-d array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("draws need at least one draw and one item")
        canon = np.vstack([canonicalize(row) for row in arr])
        return cls(canon)

    @property
    def n_draws(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_items(self) -> int:
        return int(self.labels.shape[1])

    @property
    def k_h(self) -> int:
        """Largest cluster count appearing in any draw."""
        return self._k_h


class ContingencyTable:
    """Cross-tabulation of a fixed "truth" partition against an estimate.

    Rows index truth clusters, columns index estimate clusters.  Margins and
    the total are maintained incrementally; :meth:`move` relocates one item
    between estimate columns by updating exactly four counts.  Columns may be
    transiently empty (a move can vacate one); rows never are.

    The table is single-writer mutable: share it across threads only while no
    thread mutates it.
    """

    def __init__(self, counts):
        arr = np.asarray(counts)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"counts must be a nonempty 2-d array, got {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError("counts must be integers")
        if np.any(arr < 0):
            raise ValueError("counts must be nonnegative")
        self._counts = arr.astype(np.int64, copy=True)
        self._row_sums = self._counts.sum(axis=1)
        self._col_sums = self._counts.sum(axis=0)
        if np.any(self._row_sums <= 0):
            raise ValueError("every truth row must contain at least one item")
        self._n = int(self._counts.sum())

    @classmethod
    def from_labels(cls, truth, estimate) -> "ContingencyTable":
        t = canonicalize(truth) - 1
        e = canonicalize(estimate) - 1
        if t.size != e.size:
            raise ValueError(
                f"label vectors differ in length: {t.size} versus {e.size}"
            )
        p = int(t.max()) + 1
        q = int(e.max()) + 1
        flat = np.bincount(t * q + e, minlength=p * q)
        return cls(flat.reshape(p, q))

    @property
    def counts(self) -> np.ndarray:
        """The count matrix.  Treat as read-only; mutate via :meth:`move`."""
        return self._counts

    @property
    def row_sums(self) -> np.ndarray:
        return self._row_sums

    @property
    def col_sums(self) -> np.ndarray:
        return self._col_sums

    @property
    def n(self) -> int:
        """Total number of items tabulated."""
        return self._n

    @property
    def shape(self) -> tuple[int, int]:
        return self._counts.shape

    def add_column(self) -> int:
        """Append an empty estimate column and return its index."""
        self._counts = np.hstack(
            [self._counts, np.zeros((self._counts.shape[0], 1), dtype=np.int64)]
        )
        self._col_sums = np.append(self._col_sums, 0)
        return self._counts.shape[1] - 1

    def move(self, truth_row: int, from_col: int, to_col: int) -> "ContingencyTable":
        """Move one item of cluster ``truth_row`` between estimate columns.

        ``to_col`` may be :data:`NEW_CLUSTER`, which appends an empty column
        first.  Row margins and the total are unchanged by construction.
        """
        p, q = self._counts.shape
        if not 0 <= truth_row < p:
            raise ValueError(f"truth_row {truth_row} out of range for {p} rows")
        if not 0 <= from_col < q:
            raise ValueError(f"from_col {from_col} out of range for {q} columns")
        if to_col == NEW_CLUSTER:
            to_col = self.add_column()
        elif not 0 <= to_col < q:
            raise ValueError(f"to_col {to_col} out of range for {q} columns")
        if self._counts[truth_row, from_col] < 1:
            raise CacheCorruptionError(
                f"cannot move out of empty cell ({truth_row}, {from_col})"
            )
        self._counts[truth_row, from_col] -= 1
        self._counts[truth_row, to_col] += 1
        self._col_sums[from_col] -= 1
        self._col_sums[to_col] += 1
        return self

    def compact_column(self, col: int) -> "ContingencyTable":
        """Drop an empty column, remapping the last column into its slot."""
        q = self._counts.shape[1]
        if not 0 <= col < q:
            raise ValueError(f"column {col} out of range for {q} columns")
        if self._col_sums[col] != 0:
            raise ValueError(f"column {col} is not empty")
        last = q - 1
        if col != last:
            self._counts[:, col] = self._counts[:, last]
            self._col_sums[col] = self._col_sums[last]
        self._counts = self._counts[:, :last].copy()
        self._col_sums = self._col_sums[:last].copy()
        return self

    def validate(self) -> None:
        """Check margins against a fresh summation; raise on any mismatch."""
        if (
            not np.array_equal(self._counts.sum(axis=1), self._row_sums)
            or not np.array_equal(self._counts.sum(axis=0), self._col_sums)
            or int(self._counts.sum()) != self._n
            or np.any(self._counts < 0)
        ):
            raise CacheCorruptionError("contingency table margins are inconsistent")


def build_contingency(truth, estimate) -> ContingencyTable:
    """Cross-tabulate two label vectors (rows: truth, columns: estimate)."""
    return ContingencyTable.from_labels(truth, estimate)


def apply_move(
    table: ContingencyTable, truth_row: int, from_col: int, to_col: int
) -> ContingencyTable:
    """Apply a single-item move to ``table`` in place and return it.

    A column vacated by the move is retained (transiently empty) so that
    column indices stay stable during a sweep step; callers compact via
    :meth:`ContingencyTable.compact_column` when they choose to.
    """
    return table.move(truth_row, from_col, to_col)


def build_psm(draws: DrawsMatrix) -> np.ndarray:
    """Posterior similarity matrix: entry (i, j) is the fraction of draws in
    which items i and j share a cluster.

    Returned dense as an n-by-n float array; symmetric with unit diagonal.
    """
    if not isinstance(draws, DrawsMatrix):
        raise ValueError("build_psm expects a DrawsMatrix")
    lab = draws.labels
    h, n = lab.shape
    acc = np.zeros((n, n), dtype=np.float64)
    for row in lab:
        acc += row[:, None] == row[None, :]
    return acc / h


class TableCache:
    """All H contingency tables between the draws and one evolving candidate.

    The candidate partition is held as a column assignment per item (-1 while
    an item is deallocated).  Per-draw counts are stacked in one integer array
    of shape (H, R, C): rows index each draw's clusters, columns index the
    candidate's clusters.  Allocating or deallocating one item updates four
    counts per table; all bookkeeping is integer-exact, so a cache that has
    seen any sequence of updates matches tables rebuilt from scratch.

    Column discipline: active columns are ``0 .. n_cols-1``.  A column emptied
    by a deallocation stays in place until the caller compacts it;
    :meth:`compact_column` remaps the last active column into the vacated slot.

    Single-writer mutable; give each search run its own cache.
    """

    def __init__(self, draws: DrawsMatrix, max_cols: int):
        if not isinstance(draws, DrawsMatrix):
            raise ValueError("TableCache expects a DrawsMatrix")
        if max_cols < 1:
            raise ValueError("max_cols must be at least 1")
        h, n = draws.labels.shape
        r = draws.k_h
        self._draws = draws
        self._rows0 = np.ascontiguousarray(draws.labels - 1)
        self._k_per_draw = self._rows0.max(axis=1) + 1
        self._h_idx = np.arange(h)
        self.counts = np.zeros((h, r, max_cols), dtype=np.int64)
        self.row_sums = np.zeros((h, r), dtype=np.int64)
        self.col_sums = np.zeros(max_cols, dtype=np.int64)
        self.assign = np.full(n, -1, dtype=np.int64)
        self.n_cols = 0
        self.m = 0
        # x*log2(x) lookup for counts 0..n+1; shared by the loss fast paths.
        v = np.arange(n + 2, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = v * np.log2(v)
        g[0] = 0.0
        self.xlogx = g
        self.xlogx_step = np.diff(g, prepend=0.0)  # g(k) - g(k-1), index 0 unused

    @classmethod
    def from_candidate(
        cls, draws: DrawsMatrix, candidate, max_cols: int | None = None
    ) -> "TableCache":
        """Build a fully-allocated cache for a given candidate partition."""
        e0 = canonicalize(candidate) - 1
        if e0.size != draws.n_items:
            raise ValueError(
                f"candidate has {e0.size} items, draws have {draws.n_items}"
            )
        q = int(e0.max()) + 1
        if max_cols is None:
            max_cols = q
        if max_cols < q:
            raise ValueError(f"max_cols {max_cols} below candidate clusters {q}")
        cache = cls(draws, max_cols)
        cache.load_candidate(e0 + 1)
        return cache

    @property
    def n_items(self) -> int:
        return self.assign.size

    @property
    def n_draws(self) -> int:
        return self._rows0.shape[0]

    @property
    def draws(self) -> DrawsMatrix:
        return self._draws

    @property
    def capacity(self) -> int:
        return self.col_sums.size

    def load_candidate(self, labels) -> None:
        """Reset the cache to a fully-allocated candidate in one shot."""
        e0 = canonicalize(labels) - 1
        n = self.n_items
        if e0.size != n:
            raise ValueError(f"candidate has {e0.size} items, expected {n}")
        q = int(e0.max()) + 1
        cap = self.capacity
        if q > cap:
            raise CacheCorruptionError(f"candidate needs {q} columns, capacity {cap}")
        h, r, _ = self.counts.shape
        flat = (self._h_idx[:, None] * r + self._rows0) * cap + e0[None, :]
        self.counts[...] = np.bincount(flat.ravel(), minlength=h * r * cap).reshape(
            h, r, cap
        )
        self.row_sums[...] = self.counts.sum(axis=2)
        self.col_sums[...] = np.bincount(e0, minlength=cap)
        self.assign[...] = e0
        self.n_cols = q
        self.m = n

    def allocate(self, item: int, col: int) -> None:
        """Place a deallocated item into an active column."""
        if self.assign[item] != -1:
            raise CacheCorruptionError(f"item {item} is already allocated")
        if not 0 <= col < self.n_cols:
            raise CacheCorruptionError(f"column {col} is not active")
        r = self._rows0[:, item]
        self.counts[self._h_idx, r, col] += 1
        self.row_sums[self._h_idx, r] += 1
        self.col_sums[col] += 1
        self.assign[item] = col
        self.m += 1

    def deallocate(self, item: int) -> int:
        """Remove an allocated item; returns the column it occupied.

        The column is kept in place even if now empty; compact explicitly.
        """
        col = int(self.assign[item])
        if col == -1:
            raise CacheCorruptionError(f"item {item} is already deallocated")
        r = self._rows0[:, item]
        self.counts[self._h_idx, r, col] -= 1
        self.row_sums[self._h_idx, r] -= 1
        self.col_sums[col] -= 1
        self.assign[item] = -1
        self.m -= 1
        return col

    def new_column(self) -> int:
        """Activate one more (empty) column and return its index."""
        if self.n_cols >= self.capacity:
            raise CacheCorruptionError("column capacity exhausted")
        col = self.n_cols
        self.n_cols += 1
        return col

    def compact_column(self, col: int) -> None:
        """Deactivate an empty column, remapping the last column into its slot."""
        if not 0 <= col < self.n_cols:
            raise CacheCorruptionError(f"column {col} is not active")
        if self.col_sums[col] != 0:
            raise CacheCorruptionError(f"column {col} is not empty")
        last = self.n_cols - 1
        if col != last:
            self.counts[:, :, col] = self.counts[:, :, last]
            self.col_sums[col] = self.col_sums[last]
            self.counts[:, :, last] = 0
            self.col_sums[last] = 0
            self.assign[self.assign == last] = col
        self.n_cols = last

    def snapshot(self):
        """Copy of all mutable state, for cheap revert."""
        return (
            self.counts.copy(),
            self.row_sums.copy(),
            self.col_sums.copy(),
            self.assign.copy(),
            self.n_cols,
            self.m,
        )

    def restore(self, snap) -> None:
        counts, row_sums, col_sums, assign, n_cols, m = snap
        self.counts[...] = counts
        self.row_sums[...] = row_sums
        self.col_sums[...] = col_sums
        self.assign[...] = assign
        self.n_cols = n_cols
        self.m = m

    def candidate_labels(self) -> np.ndarray:
        """Canonical labels of the current candidate (requires full allocation)."""
        if self.m != self.n_items:
            raise CacheCorruptionError(
                f"candidate incomplete: {self.m} of {self.n_items} items allocated"
            )
        return canonicalize(self.assign + 1)

    def tables(self) -> list[ContingencyTable]:
        """Materialize the per-draw tables (requires full allocation)."""
        if self.m != self.n_items:
            raise CacheCorruptionError("tables() requires a fully-allocated candidate")
        out = []
        for h in range(self.n_draws):
            k = self._k_per_draw[h]
            out.append(ContingencyTable(self.counts[h, :k, : self.n_cols]))
        return out

    def validate(self) -> None:
        """Rebuild all counts from scratch and compare; raise on any drift."""
        cap = self.capacity
        h, r, _ = self.counts.shape
        alloc = self.assign >= 0
        fresh = np.zeros_like(self.counts)
        if alloc.any():
            cols = self.assign[alloc]
            rows = self._rows0[:, alloc]
            flat = (self._h_idx[:, None] * r + rows) * cap + cols[None, :]
            fresh[...] = np.bincount(flat.ravel(), minlength=h * r * cap).reshape(
                h, r, cap
            )
        ok = (
            np.array_equal(fresh, self.counts)
            and np.array_equal(fresh.sum(axis=2), self.row_sums)
            and np.array_equal(
                np.bincount(self.assign[alloc], minlength=cap), self.col_sums
            )
            and self.m == int(alloc.sum())
            and bool(np.all(self.col_sums[self.n_cols :] == 0))
        )
        if not ok:
            raise CacheCorruptionError("cache counts disagree with a fresh rebuild")
