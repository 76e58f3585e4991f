"""Sparse dataset loading, synthesis, and nnz-balanced partitioning.

The data matrix is stored column-compressed (features in columns, samples in
rows); a row-compressed view is built for sample-partitioned algorithms.
LIBSVM text is the canonical on-disk format; a versioned binary cache can be
written alongside for faster reloads.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError

CACHE_FORMAT = "synclin-cache"
CACHE_VERSION = 1

BY_COLUMN = "by-column"
BY_ROW = "by-row"


@dataclass
class SparseMatrix:
    """Column-compressed sparse matrix.

    ``col_ptr`` has length ``n_cols + 1``; column ``j`` occupies the slice
    ``[col_ptr[j], col_ptr[j+1])`` of ``row_idx``/``values`` with strictly
    increasing row indices.  ``col_ids`` maps local columns back to global
    column ids when the matrix is a worker-local block.
    """

    n_rows: int
    n_cols: int
    col_ptr: np.ndarray
    row_idx: np.ndarray
    values: np.ndarray
    col_ids: np.ndarray | None = None

    def __post_init__(self):
        self.col_ptr = np.asarray(self.col_ptr, dtype=np.int64)
        self.row_idx = np.asarray(self.row_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.col_ptr.shape != (self.n_cols + 1,):
            raise ValueError("col_ptr must have length n_cols + 1")
        if self.col_ptr[0] != 0 or self.col_ptr[-1] != self.row_idx.size:
            raise ValueError("col_ptr must start at 0 and end at nnz")
        if np.any(np.diff(self.col_ptr) < 0):
            raise ValueError("col_ptr must be nondecreasing")
        if self.row_idx.size != self.values.size:
            raise ValueError("row_idx and values length mismatch")
        if self.row_idx.size and (self.row_idx.min() < 0 or self.row_idx.max() >= self.n_rows):
            raise ValueError("row index out of range")
        # strictly increasing rows within each column
        if self.row_idx.size:
            inner = np.diff(self.row_idx)
            # positions where a new column starts must be exempt
            starts = np.zeros(self.row_idx.size, dtype=bool)
            interior = self.col_ptr[1:-1]
            starts[interior[interior < self.row_idx.size]] = True
            if np.any((inner <= 0) & ~starts[1:]):
                raise ValueError("row indices must be strictly increasing within a column")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def column(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Views of the (rows, values) of column ``j``."""
        lo, hi = self.col_ptr[j], self.col_ptr[j + 1]
        return self.row_idx[lo:hi], self.values[lo:hi]

    def column_nnz(self) -> np.ndarray:
        return np.diff(self.col_ptr)

    def row_nnz(self) -> np.ndarray:
        return np.bincount(self.row_idx, minlength=self.n_rows).astype(np.int64)

    def column_sqnorms(self) -> np.ndarray:
        out = np.zeros(self.n_cols)
        np.add.at(out, np.repeat(np.arange(self.n_cols), np.diff(self.col_ptr)), self.values**2)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """A @ x without densifying."""
        if x.shape != (self.n_cols,):
            raise ValueError("dimension mismatch")
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.col_ptr))
        out = np.zeros(self.n_rows)
        np.add.at(out, self.row_idx, self.values * x[cols])
        return out

    def rmatvec(self, x: np.ndarray) -> np.ndarray:
        """A.T @ x without densifying."""
        if x.shape != (self.n_rows,):
            raise ValueError("dimension mismatch")
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.col_ptr))
        out = np.zeros(self.n_cols)
        np.add.at(out, cols, self.values * x[self.row_idx])
        return out

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.col_ptr))
        out[self.row_idx, cols] = self.values
        return out

    def to_scipy(self):
        from scipy.sparse import csc_matrix

        return csc_matrix(
            (self.values, self.row_idx, self.col_ptr), shape=(self.n_rows, self.n_cols)
        )

    def to_row_major(self) -> "RowMajorMatrix":
        """Row-compressed copy of the same matrix."""
        cols = np.repeat(np.arange(self.n_cols), np.diff(self.col_ptr))
        order = np.lexsort((cols, self.row_idx))
        row_counts = np.bincount(self.row_idx, minlength=self.n_rows)
        row_ptr = np.concatenate(([0], np.cumsum(row_counts)))
        return RowMajorMatrix(
            n_rows=self.n_rows,
            n_cols=self.n_cols,
            row_ptr=row_ptr,
            col_idx=cols[order],
            values=self.values[order],
        )


@dataclass
class RowMajorMatrix:
    """Row-compressed companion of :class:`SparseMatrix` (samples in rows)."""

    n_rows: int
    n_cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        self.row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        self.col_idx = np.asarray(self.col_idx, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.row_ptr.shape != (self.n_rows + 1,):
            raise ValueError("row_ptr must have length n_rows + 1")
        if self.col_idx.size and self.col_idx.max() >= self.n_cols:
            raise ValueError("column index out of range")

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.row_ptr[i], self.row_ptr[i + 1]
        return self.col_idx[lo:hi], self.values[lo:hi]

    def predictions(self, alpha: np.ndarray) -> np.ndarray:
        """A_local @ alpha for all local rows."""
        prods = self.values * alpha[self.col_idx]
        out = np.zeros(self.n_rows)
        nonempty = np.flatnonzero(np.diff(self.row_ptr) > 0)
        if nonempty.size:
            sums = np.add.reduceat(prods, self.row_ptr[nonempty])
            out[nonempty] = sums
        return out


@dataclass
class PartitionPlan:
    """Assignment of column (or row) indices to K workers, nnz balanced."""

    mode: str
    assignment: list[np.ndarray]
    nnz_per_part: np.ndarray
    n_indices: int

    def __post_init__(self):
        if self.mode not in (BY_COLUMN, BY_ROW):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        self.assignment = [np.asarray(a, dtype=np.int64) for a in self.assignment]
        self.nnz_per_part = np.asarray(self.nnz_per_part, dtype=np.int64)
        if len(self.assignment) != self.nnz_per_part.size:
            raise ValueError("assignment / nnz_per_part length mismatch")
        merged = np.concatenate(self.assignment) if self.assignment else np.array([], dtype=np.int64)
        if merged.size != self.n_indices or (
            merged.size and not np.array_equal(np.sort(merged), np.arange(self.n_indices))
        ):
            raise ValueError("partitions must be disjoint and cover all indices")

    @property
    def k(self) -> int:
        return len(self.assignment)


def _parse_feature(tok: str, line_no: int) -> tuple[int, float]:
    try:
        idx_s, val_s = tok.split(":", 1)
        return int(idx_s), float(val_s)
    except ValueError:
        raise ParseError(f"malformed feature entry {tok!r}", line_no) from None


def load_libsvm(path, n_features: int | None = None) -> tuple[SparseMatrix, np.ndarray]:
    """Parse a LIBSVM text file into a column-compressed matrix plus labels.

    Feature indices are 1-based and strictly increasing per line; they are
    converted to 0-based columns.  The feature count is the maximum index seen
    unless ``n_features`` overrides it (datasets may omit trailing all-zero
    features).
    """
    labels: list[float] = []
    row_list: list[int] = []
    col_list: list[int] = []
    val_list: list[float] = []
    max_col = 0

    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            toks = line.split()
            try:
                label = float(toks[0])
            except ValueError:
                raise ParseError(f"bad label {toks[0]!r}", line_no) from None
            row = len(labels)
            labels.append(label)
            prev = 0
            for tok in toks[1:]:
                idx, val = _parse_feature(tok, line_no)
                if idx < 1:
                    raise ParseError(f"feature index {idx} must be >= 1", line_no)
                if idx <= prev:
                    raise ParseError(
                        f"feature indices must be strictly increasing (got {idx} after {prev})",
                        line_no,
                    )
                prev = idx
                max_col = max(max_col, idx)
                row_list.append(row)
                col_list.append(idx - 1)
                val_list.append(val)

    m = len(labels)
    n = max_col if n_features is None else n_features
    if n_features is not None and max_col > n_features:
        raise ParseError(f"feature index {max_col} exceeds n_features={n_features}", 0)

    rows = np.asarray(row_list, dtype=np.int64)
    cols = np.asarray(col_list, dtype=np.int64)
    vals = np.asarray(val_list, dtype=np.float64)
    order = np.lexsort((rows, cols))
    col_ptr = np.concatenate(([0], np.cumsum(np.bincount(cols, minlength=n)))).astype(np.int64)
    mat = SparseMatrix(
        n_rows=m, n_cols=n, col_ptr=col_ptr, row_idx=rows[order], values=vals[order]
    )
    return mat, np.asarray(labels, dtype=np.float64)


def dump_libsvm(mat: SparseMatrix, y: np.ndarray, path) -> None:
    """Write LIBSVM text that reparses to the identical matrix."""
    if y.shape != (mat.n_rows,):
        raise ValueError("label vector length mismatch")
    rm = mat.to_row_major()
    with open(path, "w") as fh:
        for i in range(mat.n_rows):
            cols, vals = rm.row(i)
            parts = [repr(float(y[i]))]
            parts.extend(f"{c + 1}:{float(v)!r}" for c, v in zip(cols, vals))
            fh.write(" ".join(parts) + "\n")


def save_cache(mat: SparseMatrix, y: np.ndarray, path) -> None:
    np.savez_compressed(
        path,
        format=CACHE_FORMAT,
        version=CACHE_VERSION,
        n_rows=mat.n_rows,
        n_cols=mat.n_cols,
        col_ptr=mat.col_ptr,
        row_idx=mat.row_idx,
        values=mat.values,
        y=y,
    )


def load_cache(path) -> tuple[SparseMatrix, np.ndarray]:
    with np.load(path, allow_pickle=False) as z:
        if str(z["format"]) != CACHE_FORMAT or int(z["version"]) != CACHE_VERSION:
            raise ConfigurationError(f"{path}: not a synclin cache (or wrong version)")
        mat = SparseMatrix(
            n_rows=int(z["n_rows"]),
            n_cols=int(z["n_cols"]),
            col_ptr=z["col_ptr"],
            row_idx=z["row_idx"],
            values=z["values"],
        )
        return mat, z["y"]


def partition(mat: SparseMatrix, k: int, mode: str = BY_COLUMN, seed: int | None = None) -> PartitionPlan:
    """Balance nonzeros across ``k`` workers with LPT greedy assignment.

    Indices are sorted by nnz descending (ties by index ascending) and each
    is assigned to the currently lightest partition, which keeps the maximum
    load within 4/3 of optimal.  Deterministic for fixed inputs; ``seed``
    optionally shuffles runs of equal-nnz indices before assignment.
    """
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    nnz = mat.column_nnz() if mode == BY_COLUMN else mat.row_nnz()
    n = nnz.size
    if k > n:
        raise ConfigurationError(f"k={k} exceeds the {n} partitionable indices")

    order = np.lexsort((np.arange(n), -nnz))
    if seed is not None:
        rng = np.random.default_rng(seed)
        sorted_nnz = nnz[order]
        start = 0
        for end in range(1, n + 1):
            if end == n or sorted_nnz[end] != sorted_nnz[start]:
                if end - start > 1:
                    order[start:end] = rng.permutation(order[start:end])
                start = end

    loads = [(0, j) for j in range(k)]
    heapq.heapify(loads)
    parts: list[list[int]] = [[] for _ in range(k)]
    totals = np.zeros(k, dtype=np.int64)
    for i in order:
        load, j = heapq.heappop(loads)
        parts[j].append(int(i))
        totals[j] += nnz[i]
        heapq.heappush(loads, (int(totals[j]), j))

    assignment = [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]
    return PartitionPlan(mode=mode, assignment=assignment, nnz_per_part=totals, n_indices=n)


def local_block(mat: SparseMatrix, plan: PartitionPlan, k: int):
    """Sub-matrix restricted to worker ``k``'s indices (0-based worker id).

    By-column plans yield a :class:`SparseMatrix` with ``col_ids`` set; by-row
    plans yield a :class:`RowMajorMatrix` with ``row_ids`` set.  The global
    row (respectively column) dimension is preserved.
    """
    if not 0 <= k < plan.k:
        raise ConfigurationError(f"worker id {k} out of range for k={plan.k}")
    idx = plan.assignment[k]
    if plan.mode == BY_COLUMN:
        counts = np.diff(mat.col_ptr)[idx]
        ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        take = np.concatenate(
            [np.arange(mat.col_ptr[j], mat.col_ptr[j + 1]) for j in idx]
        ) if idx.size else np.array([], dtype=np.int64)
        return SparseMatrix(
            n_rows=mat.n_rows,
            n_cols=idx.size,
            col_ptr=ptr,
            row_idx=mat.row_idx[take],
            values=mat.values[take],
            col_ids=idx.copy(),
        )
    rm = mat.to_row_major()
    counts = np.diff(rm.row_ptr)[idx]
    ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    take = np.concatenate(
        [np.arange(rm.row_ptr[i], rm.row_ptr[i + 1]) for i in idx]
    ) if idx.size else np.array([], dtype=np.int64)
    return RowMajorMatrix(
        n_rows=idx.size,
        n_cols=mat.n_cols,
        row_ptr=ptr,
        col_idx=rm.col_idx[take],
        values=rm.values[take],
        row_ids=idx.copy(),
    )


def make_synthetic(
    m: int,
    n: int,
    nnz_per_col: int = 25,
    seed: int = 0,
    noise: float = 0.5,
    col_scale_sigma: float = 0.0,
    signal_density: float = 0.3,
) -> tuple[SparseMatrix, np.ndarray]:
    """Random sparse regression instance with a planted coefficient vector.

    ``col_scale_sigma > 0`` draws lognormal per-column scales, giving the
    heterogeneous feature norms typical of real sparse datasets.
    """
    rng = np.random.default_rng(seed)
    rows_all, vals_all, counts = [], [], []
    for _ in range(n):
        nz = int(max(1, min(m, rng.poisson(nnz_per_col))))
        r = np.sort(rng.choice(m, size=nz, replace=False))
        v = rng.normal(size=nz) / np.sqrt(nnz_per_col)
        rows_all.append(r)
        vals_all.append(v)
        counts.append(nz)
    if col_scale_sigma > 0:
        scales = rng.lognormal(mean=0.0, sigma=col_scale_sigma, size=n)
        vals_all = [v * s for v, s in zip(vals_all, scales)]
    col_ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    mat = SparseMatrix(
        n_rows=m,
        n_cols=n,
        col_ptr=col_ptr,
        row_idx=np.concatenate(rows_all),
        values=np.concatenate(vals_all),
    )
    alpha_true = rng.normal(size=n) * (rng.random(n) < signal_density)
    y = mat.matvec(alpha_true) + noise * rng.normal(size=m)
    return mat, y


BUNDLED = {
    "tiny": "tiny.libsvm",
    "bench": "bench.libsvm",
    "digits": "digits.libsvm",
    "lesmis": "lesmis.libsvm",
}


def bundled_dataset_path(name: str) -> Path:
    """Filesystem path of a dataset shipped with the package."""
    if name not in BUNDLED:
        raise ConfigurationError(f"unknown bundled dataset {name!r}; have {sorted(BUNDLED)}")
    return Path(resources.files("synclin.assets") / BUNDLED[name])


def resolve_dataset(spec: str) -> Path:
    """Map a dataset argument (bundled name or filesystem path) to a path."""
    if spec in BUNDLED:
        return bundled_dataset_path(spec)
    return Path(spec)
