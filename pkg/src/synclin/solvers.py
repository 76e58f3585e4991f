"""Per-round local computations for the three synchronous algorithms.

Workers keep their coordinate shard ``alpha_local`` resident across rounds,
so only the m-dimensional shared vector (or the n-dimensional parameter
vector for sample-partitioned SGD) ever crosses the wire.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .datasets import RowMajorMatrix, SparseMatrix

log = logging.getLogger(__name__)

COCOA = "cocoa"
MB_SCD = "mb-scd"
MB_SGD = "mb-sgd"
ALGORITHMS = (COCOA, MB_SCD, MB_SGD)


@dataclass
class LocalUpdate:
    """One worker's contribution to a round.

    Exactly one of ``delta_v`` (column-partitioned algorithms) and
    ``partial_gradient`` (sample-partitioned SGD) is set.  ``aux`` carries the
    scalar the master needs to evaluate the objective without seeing alpha:
    sum(alpha_i^2) over local coordinates, or the local loss term for SGD.
    """

    steps_done: int
    delta_v: np.ndarray | None = None
    partial_gradient: np.ndarray | None = None
    aux: float = 0.0

    def __post_init__(self):
        if (self.delta_v is None) == (self.partial_gradient is None):
            raise ValueError("exactly one of delta_v / partial_gradient must be set")

    @property
    def payload(self) -> np.ndarray:
        return self.delta_v if self.delta_v is not None else self.partial_gradient


@dataclass
class WorkerState:
    """Resident state of one worker (not shared across threads).

    ``block`` is the local sub-matrix, ``global_index_map`` the local-to-global
    index mapping, and ``rng`` the per-worker generator seeded with
    ``base_seed + worker_id``.  Column modes carry ``alpha_local`` and cached
    squared column norms; row mode carries the local labels instead.
    """

    worker_id: int
    block: SparseMatrix | RowMajorMatrix
    global_index_map: np.ndarray
    rng: np.random.Generator
    alpha_local: np.ndarray | None = None
    column_sqnorms: np.ndarray | None = None
    y_local: np.ndarray | None = None
    staged: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def n_local(self) -> int:
        return self.global_index_map.size

    def commit_staged(self) -> None:
        """Apply a staged mini-batch SCD update (second phase of the commit)."""
        if self.staged is not None:
            idx, vals = self.staged
            self.alpha_local[idx] = vals
            self.staged = None


def make_column_worker_state(worker_id: int, block: SparseMatrix, seed: int) -> WorkerState:
    return WorkerState(
        worker_id=worker_id,
        block=block,
        global_index_map=block.col_ids if block.col_ids is not None else np.arange(block.n_cols),
        rng=np.random.default_rng(seed),
        alpha_local=np.zeros(block.n_cols),
        column_sqnorms=block.column_sqnorms(),
    )


def make_row_worker_state(worker_id: int, block: RowMajorMatrix, y_local: np.ndarray,
                          seed: int) -> WorkerState:
    return WorkerState(
        worker_id=worker_id,
        block=block,
        global_index_map=block.row_ids if block.row_ids is not None else np.arange(block.n_rows),
        rng=np.random.default_rng(seed),
        y_local=np.asarray(y_local, dtype=np.float64),
    )


def cocoa_local_scd(w: WorkerState, lam: float, sigma_prime: float, v: np.ndarray,
                    y: np.ndarray, h: int) -> LocalUpdate:
    """H steps of stochastic coordinate descent on the local subproblem.

    Coordinates are drawn uniformly with replacement.  Each step exactly
    minimizes the local surrogate in which the worker's own accumulated
    update w = A_local (alpha - alpha_at_round_start) is penalized with
    weight ``sigma_prime`` (= K for the safe additive-aggregation choice);
    that keeps the sum of all K worker updates a descent direction for the
    global objective.  ``alpha_local`` is updated in place; the returned
    ``delta_v`` equals A_local @ (alpha_after - alpha_before).
    """
    if h <= 0:
        log.warning("cocoa_local_scd called with H=0: returning a zero update")
        return LocalUpdate(steps_done=0, delta_v=np.zeros(v.size),
                           aux=float(w.alpha_local @ w.alpha_local))
    mat = w.block
    alpha = w.alpha_local
    sq = w.column_sqnorms
    col_ptr, row_idx, values = mat.col_ptr, mat.row_idx, mat.values
    # G tracks y - v - sigma_prime * w, so each coordinate step is a plain
    # 1-D minimization: delta = (c_i^T G - lam * a_i) / (sigma' ||c_i||^2 + lam)
    G = y - v
    picks = w.rng.integers(0, mat.n_cols, size=h)
    for i in picks:
        lo, hi = col_ptr[i], col_ptr[i + 1]
        rows = row_idx[lo:hi]
        vals = values[lo:hi]
        delta = (vals @ G[rows] - lam * alpha[i]) / (sigma_prime * sq[i] + lam)
        alpha[i] += delta
        G[rows] -= sigma_prime * delta * vals
    delta_v = ((y - v) - G) / sigma_prime
    return LocalUpdate(steps_done=h, delta_v=delta_v, aux=float(alpha @ alpha))


def minibatch_scd_local(w: WorkerState, lam: float, gamma: float, v: np.ndarray,
                        y: np.ndarray, h: int) -> LocalUpdate:
    """Coordinate gradients for an H-subset at the frozen incoming v.

    Samples without replacement, returns delta_v = -gamma * sum g_i c_i and
    stages alpha_i <- alpha_i - gamma g_i.  The staged values are committed
    only once the master confirms the round (receipt of the next broadcast),
    so worker state never runs ahead of the v the master actually applied.
    """
    mat = w.block
    if h > mat.n_cols:
        log.warning("H=%d exceeds the %d local coordinates; clamping", h, mat.n_cols)
        h = mat.n_cols
    if h <= 0:
        log.warning("minibatch_scd_local called with H=0: returning a zero update")
        return LocalUpdate(steps_done=0, delta_v=np.zeros(v.size),
                           aux=float(w.alpha_local @ w.alpha_local))
    picks = np.sort(w.rng.choice(mat.n_cols, size=h, replace=False))
    res = v - y
    delta_v = np.zeros(v.size)
    new_vals = np.empty(h)
    alpha = w.alpha_local
    for t, i in enumerate(picks):
        rows, vals = mat.column(i)
        g = float(vals @ res[rows]) + lam * float(alpha[i])
        new_vals[t] = alpha[i] - gamma * g
        delta_v[rows] -= gamma * g * vals
    w.staged = (picks, new_vals)
    aux = float(alpha @ alpha) - float(alpha[picks] @ alpha[picks]) + float(new_vals @ new_vals)
    return LocalUpdate(steps_done=h, delta_v=delta_v, aux=aux)


def minibatch_sgd_local(w: WorkerState, lam: float, alpha: np.ndarray, h: int,
                        m_total: int, k_workers: int, loss: float | None = None) -> LocalUpdate:
    """Unbiased partial gradient from H local samples (without replacement).

    Returns (m_total / (K * H)) * sum_{i in S} (r_i^T alpha - y_i) r_i; the
    lam * alpha term is added once by the master.  ``aux`` carries the local
    loss 0.5 * sum (r_i^T alpha - y_i)^2 at the incoming alpha so the master
    can track the objective; pass ``loss`` precomputed to keep that
    instrumentation out of timed solver calls.
    """
    mat: RowMajorMatrix = w.block
    if loss is None:
        residual_all = mat.predictions(alpha) - w.y_local
        loss = 0.5 * float(residual_all @ residual_all)
    if h > mat.n_rows:
        log.warning("H=%d exceeds the %d local samples; clamping", h, mat.n_rows)
        h = mat.n_rows
    if h <= 0:
        log.warning("minibatch_sgd_local called with H=0: returning a zero update")
        return LocalUpdate(steps_done=0, partial_gradient=np.zeros(alpha.size), aux=loss)
    picks = np.sort(w.rng.choice(mat.n_rows, size=h, replace=False))
    grad = np.zeros(alpha.size)
    for i in picks:
        cols, vals = mat.row(i)
        residual = float(vals @ alpha[cols]) - w.y_local[i]
        grad[cols] += residual * vals
    grad *= m_total / (k_workers * h)
    return LocalUpdate(steps_done=h, partial_gradient=grad, aux=loss)
