"""Synchronous round protocol: local compute, reduce, aggregate, broadcast.

Every round the master broadcasts the shared state (v for column-partitioned
algorithms, alpha for sample-partitioned SGD), each worker computes its
local update, the transport reduces the updates to an elementwise sum, and
the master applies the aggregation rule and records timings plus the
objective.  A strict barrier separates rounds: round t+1 never starts before
every round-t update has been reduced.

Update payloads carry, after the main vector, one scalar the master needs to
evaluate the objective without ever shipping alpha (sum of alpha_i^2, or the
local loss for SGD) and K one-hot slots holding each worker's compute
seconds, which survive the elementwise sum untouched.

Objective bookkeeping: for cocoa/mb-scd, record r holds F after round r's
aggregation; for mb-sgd the master has no data, so workers piggyback the
loss at the alpha they received and record r holds F of the state entering
round r (one round behind the newest update).  Objective evaluation time is
excluded from the timing buckets.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import BY_COLUMN, BY_ROW, SparseMatrix, local_block, partition
from .errors import ConfigurationError, ProtocolError
from .objective import RidgeProblem, objective_from_parts, suboptimality_of
from .perf import RoundTimings
from .solvers import (
    ALGORITHMS,
    COCOA,
    MB_SCD,
    MB_SGD,
    LocalUpdate,
    cocoa_local_scd,
    make_column_worker_state,
    make_row_worker_state,
    minibatch_scd_local,
    minibatch_sgd_local,
)
from .transport import (
    KIND_BROADCAST,
    KIND_CONTROL,
    OP_FETCH_SHARD,
    OP_STOP,
    OP_T1_PROBE,
    BaseTransport,
)

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3

STATUS_CONVERGED = "converged"
STATUS_MAX_ROUNDS = "max_rounds"
STATUS_DIVERGED = "diverged"


@dataclass
class AlgorithmConfig:
    """One training run: algorithm, H, step size, and termination rules."""

    algorithm: str
    h: int
    k: int = 1
    gamma: float = 1.0
    lam: float = 1.0
    max_rounds: int = 1000
    target_suboptimality: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigurationError(f"unknown algorithm {self.algorithm!r}")
        if self.h < 1:
            raise ConfigurationError("H must be >= 1")
        if self.k < 1:
            raise ConfigurationError("K must be >= 1")
        if not 0 < self.target_suboptimality <= 1:
            raise ConfigurationError("target suboptimality must be in (0, 1]")
        if self.gamma <= 0:
            raise ConfigurationError("gamma must be positive")
        if self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1")
        if self.algorithm == COCOA and self.gamma != 1.0:
            raise ConfigurationError(
                "cocoa ships with additive aggregation (gamma=1, sigma'=K); "
                "other gammas would desynchronize worker shards from v"
            )

    @property
    def partition_mode(self) -> str:
        return BY_ROW if self.algorithm == MB_SGD else BY_COLUMN

    @property
    def sigma_prime(self) -> float:
        return self.gamma * self.k


@dataclass
class RoundRecord:
    round: int
    timings: RoundTimings
    objective: float
    suboptimality: float


@dataclass
class RunResult:
    """Engine output: per-round records plus the run-level status flag."""

    records: list[RoundRecord]
    status: str
    f_star: float
    f_initial: float

    @property
    def reached_target(self) -> bool:
        return self.status == STATUS_CONVERGED

    @property
    def final_suboptimality(self) -> float:
        return self.records[-1].suboptimality if self.records else float("inf")


@dataclass
class WorkerContext:
    """Everything a worker needs to run rounds; shipped once at startup."""

    algorithm: str
    worker_id: int
    k: int
    h: int
    lam: float
    gamma: float
    sigma_prime: float
    seed: int
    block: object
    y: np.ndarray
    m_total: int
    n_total: int


def build_worker_contexts(cfg: AlgorithmConfig, problem: RidgeProblem) -> list[WorkerContext]:
    plan = partition(problem.A, cfg.k, mode=cfg.partition_mode, seed=None)
    ctxs = []
    for wid in range(cfg.k):
        block = local_block(problem.A, plan, wid)
        y = problem.y[plan.assignment[wid]] if cfg.partition_mode == BY_ROW else problem.y
        ctxs.append(
            WorkerContext(
                algorithm=cfg.algorithm,
                worker_id=wid,
                k=cfg.k,
                h=cfg.h,
                lam=cfg.lam,
                gamma=cfg.gamma,
                sigma_prime=cfg.sigma_prime,
                seed=cfg.seed + wid,
                block=block,
                y=y,
                m_total=problem.m,
                n_total=problem.n,
            )
        )
    return ctxs


def _local_loss(block, y_local: np.ndarray, alpha: np.ndarray) -> float:
    residual = block.predictions(alpha) - y_local
    return 0.5 * float(residual @ residual)


def worker_main(endpoint, ctx: WorkerContext) -> None:
    """Round loop run by every worker on its own thread or process."""
    if ctx.algorithm == MB_SGD:
        state = make_row_worker_state(ctx.worker_id, ctx.block, ctx.y, ctx.seed)
    else:
        state = make_column_worker_state(ctx.worker_id, ctx.block, ctx.seed)

    while True:
        msg = endpoint.recv()
        # any master message confirms the previous round completed
        state.commit_staged()
        if msg.kind == KIND_CONTROL:
            op = msg.payload[0] if msg.payload.size else OP_STOP
            if op == OP_STOP:
                break
            if op == OP_T1_PROBE:
                endpoint.send_update(msg.round, np.zeros(int(msg.payload[1])))
            elif op == OP_FETCH_SHARD:
                shard = np.zeros(ctx.n_total)
                if state.alpha_local is not None:
                    shard[state.global_index_map] = state.alpha_local
                endpoint.send_update(msg.round, shard)
            else:
                raise ProtocolError(f"unknown control opcode {op}")
            continue
        if msg.kind != KIND_BROADCAST:
            raise ProtocolError(f"worker got unexpected frame kind {msg.kind}")

        shared = msg.payload
        if ctx.algorithm == MB_SGD:
            # objective instrumentation, kept out of the timed compute
            loss = _local_loss(state.block, state.y_local, shared)
            t0 = time.perf_counter()
            upd = minibatch_sgd_local(state, ctx.lam, shared, ctx.h, ctx.m_total,
                                      ctx.k, loss=loss)
            compute_seconds = time.perf_counter() - t0
        elif ctx.algorithm == MB_SCD:
            t0 = time.perf_counter()
            upd = minibatch_scd_local(state, ctx.lam, ctx.gamma, shared, ctx.y, ctx.h)
            compute_seconds = time.perf_counter() - t0
        else:
            t0 = time.perf_counter()
            upd = cocoa_local_scd(state, ctx.lam, ctx.sigma_prime, shared, ctx.y, ctx.h)
            compute_seconds = time.perf_counter() - t0

        durations = np.zeros(ctx.k)
        durations[ctx.worker_id] = compute_seconds
        endpoint.send_update(msg.round, np.concatenate([upd.payload, [upd.aux], durations]))


def aggregate(updates: list[LocalUpdate], algorithm: str, lam: float = 1.0,
              alpha: np.ndarray | None = None) -> np.ndarray:
    """Master aggregation over one round's worker updates.

    Column modes return the v increment (CoCoA fixes gamma=1 and mini-batch
    SCD bakes gamma into each delta_v, so the sum is applied as is); SGD
    returns the full gradient estimate sum(partials) + lam * alpha.
    """
    if not updates:
        raise ProtocolError("aggregate needs at least one update")
    total = updates[0].payload.copy()
    for u in updates[1:]:
        if u.payload.size != total.size:
            raise ProtocolError("update dimension mismatch")
        total += u.payload
    return _apply_aggregation(total, algorithm, lam, alpha)


def _apply_aggregation(total: np.ndarray, algorithm: str, lam: float,
                       alpha: np.ndarray | None) -> np.ndarray:
    if algorithm == MB_SGD:
        if alpha is None:
            raise ConfigurationError("SGD aggregation needs the current alpha")
        return total + lam * alpha
    return total


def run(cfg: AlgorithmConfig, problem: RidgeProblem, transport: BaseTransport,
        shard_check: bool = False) -> RunResult:
    """Execute rounds until the target suboptimality, max_rounds, or divergence.

    The reference optimum F* is solved once up front (and cached on the
    problem).  With ``shard_check`` the worker shards are fetched at the end
    and v is verified against A @ alpha_global.
    """
    if transport.k != cfg.k:
        raise ConfigurationError(f"transport has k={transport.k}, config wants k={cfg.k}")
    f_star = problem.f_star()
    f_initial = objective_from_parts(np.zeros(problem.m), problem.y, cfg.lam, 0.0)

    ctxs = build_worker_contexts(cfg, problem)
    dim = problem.n if cfg.algorithm == MB_SGD else problem.m
    state = np.zeros(dim)

    records: list[RoundRecord] = []
    status = STATUS_MAX_ROUNDS
    transport.start(worker_main, ctxs)
    try:
        for round_no in range(1, cfg.max_rounds + 1):
            round_start = time.perf_counter()
            transport.broadcast(round_no, state)
            reduced = transport.reduce_sum(round_no)
            if reduced.size != dim + 1 + cfg.k:
                raise ProtocolError(
                    f"reduced payload has {reduced.size} elements, expected {dim + 1 + cfg.k}"
                )
            main, aux_total = reduced[:dim], float(reduced[dim])
            worker_seconds = reduced[dim + 1:]

            apply_start = time.perf_counter()
            if cfg.algorithm == MB_SGD:
                gradient = _apply_aggregation(main, cfg.algorithm, cfg.lam, state)
                new_state = state - cfg.gamma * gradient
            else:
                new_state = state + main
            apply_seconds = time.perf_counter() - apply_start

            # instrumentation: objective/suboptimality, excluded from buckets
            instr_start = time.perf_counter()
            if cfg.algorithm == MB_SGD:
                objective = aux_total + 0.5 * cfg.lam * float(state @ state)
            else:
                objective = objective_from_parts(new_state, problem.y, cfg.lam, aux_total)
            sub = suboptimality_of(objective, f_star)
            instr_seconds = time.perf_counter() - instr_start

            state = new_state
            t_master = transport.last_reduce_seconds + apply_seconds
            t_worker = float(worker_seconds.max())
            t_tot = (time.perf_counter() - round_start) - instr_seconds
            records.append(
                RoundRecord(
                    round=round_no,
                    timings=RoundTimings.from_measured(t_worker, t_master, t_tot),
                    objective=objective,
                    suboptimality=sub.value,
                )
            )
            if objective > DIVERGENCE_FACTOR * f_initial:
                status = STATUS_DIVERGED
                log.warning("run diverged at round %d (objective %.3g)", round_no, objective)
                break
            if sub.value <= cfg.target_suboptimality:
                status = STATUS_CONVERGED
                break
        if shard_check and cfg.algorithm != MB_SGD:
            _verify_shards(cfg, problem, transport, state)
    finally:
        transport.shutdown()
    return RunResult(records=records, status=status, f_star=f_star, f_initial=f_initial)


def _verify_shards(cfg: AlgorithmConfig, problem: RidgeProblem,
                   transport: BaseTransport, v: np.ndarray) -> None:
    """Debug reduce of worker alpha shards: v must equal A @ alpha_global."""
    probe_round = (1 << 28) - 1
    transport.send_control(probe_round, [OP_FETCH_SHARD])
    alpha_global = transport.reduce_sum(probe_round)
    v_ref = problem.A.matvec(alpha_global)
    scale = max(1.0, float(np.linalg.norm(v_ref)))
    drift = float(np.linalg.norm(v - v_ref))
    if drift > 1e-10 * scale:
        raise ProtocolError(f"shared vector drifted from A @ alpha by {drift:.3e}")


def measure_round_trip(cfg: AlgorithmConfig, problem: RidgeProblem,
                       transport: BaseTransport, trials: int = 15) -> float:
    """t1 estimate: zero-work round trips at the actual broadcast dimension."""
    from .transport import measure_t1

    ctxs = build_worker_contexts(cfg, problem)
    dim = problem.n if cfg.algorithm == MB_SGD else problem.m
    transport.start(worker_main, ctxs)
    try:
        return measure_t1(transport, dim, trials)
    finally:
        transport.shutdown()
