"""Round-time decomposition, the N(H) = a/H + b convergence model, and the
communication/computation autotuner.

The execution-time model is T(H) = N(H) * (t1 + t2 * H), where t1 is the
fixed per-round overhead (communication plus aggregation) and t2 the time a
worker needs for a single update.  Fitting a and b from a sweep and
measuring t1 and t2 gives the optimum in closed form:

    H_opt = sqrt(a * t1 / (b * t2))

so the best H grows with the square root of the communication/computation
cost ratio.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, replace
from statistics import median

import numpy as np

from .errors import CommunicationFreeRegime, ConfigurationError, FitRankError

A_DEGENERATE_ATOL = 1e-9


@dataclass(frozen=True)
class RoundTimings:
    """Per-round buckets; t_overhead is defined as the residual, so
    t_tot == t_worker + t_master + t_overhead holds exactly."""

    t_worker: float
    t_master: float
    t_overhead: float

    @property
    def t_tot(self) -> float:
        return self.t_worker + self.t_master + self.t_overhead

    @classmethod
    def from_measured(cls, t_worker: float, t_master: float, t_tot: float) -> "RoundTimings":
        return cls(t_worker=t_worker, t_master=t_master,
                   t_overhead=t_tot - t_worker - t_master)


@dataclass
class PerfFit:
    """Fitted convergence model plus, once measured, the cost constants."""

    a: float
    b: float
    r_squared: float
    t1: float | None = None
    t2: float | None = None
    h_opt: int | None = None
    degenerate: bool = False
    b_clamped: bool = False


@dataclass
class HOptPrediction:
    h_opt: int
    t_predicted: float


@dataclass
class SweepPoint:
    h: int
    rounds_to_target: int | None
    time_to_target: float | None
    reached: bool
    status: str


def fit_convergence(samples: list[tuple[int, float]]) -> PerfFit:
    """Least-squares fit of rounds-to-target against (1/H, 1).

    Needs at least three samples over at least two distinct H values.  A
    negative intercept is clamped to zero (and flagged); an essentially zero
    slope is flagged degenerate.
    """
    if len(samples) < 3:
        raise ConfigurationError(f"fit needs >= 3 samples, got {len(samples)}")
    h = np.array([float(s[0]) for s in samples])
    n_rounds = np.array([float(s[1]) for s in samples])
    if np.any(h < 1) or np.any(n_rounds < 1):
        raise ConfigurationError("fit needs H >= 1 and N >= 1")
    if np.unique(h).size < 2:
        raise FitRankError("all H values are identical; the fit is rank deficient")

    design = np.column_stack([1.0 / h, np.ones_like(h)])
    coeffs, *_ = np.linalg.lstsq(design, n_rounds, rcond=None)
    a, b = float(coeffs[0]), float(coeffs[1])
    b_clamped = False
    if b < 0:
        b = 0.0
        b_clamped = True
        a = float((n_rounds / h).sum() / (1.0 / h**2).sum())

    pred = a / h + b
    ss_res = float(((n_rounds - pred) ** 2).sum())
    ss_tot = float(((n_rounds - n_rounds.mean()) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res < 1e-12 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    degenerate = abs(a) <= A_DEGENERATE_ATOL * max(1.0, float(n_rounds.max()))
    return PerfFit(a=a, b=b, r_squared=r2, degenerate=degenerate, b_clamped=b_clamped)


def predict_h_opt(fit: PerfFit, t1: float, t2: float) -> HOptPrediction:
    """Closed-form optimum of (a/H + b)(t1 + t2 H) over H > 0.

    Returns the nearest positive integer and the model's execution time at
    the stationary point, a t2 + b t1 + 2 sqrt(a b t1 t2).
    """
    if fit.a <= 0 or t1 <= 0 or t2 <= 0:
        raise ConfigurationError("predict_h_opt needs a > 0, t1 > 0, t2 > 0")
    if fit.b <= 0:
        raise CommunicationFreeRegime(
            "fitted b == 0: the model says larger H is always better"
        )
    h_star = float(np.sqrt(fit.a * t1 / (fit.b * t2)))
    t_pred = fit.a * t2 + fit.b * t1 + 2.0 * float(np.sqrt(fit.a * fit.b * t1 * t2))
    return HOptPrediction(h_opt=max(1, round(h_star)), t_predicted=t_pred)


def brute_force_h_opt(a: float, b: float, t1: float, t2: float,
                      h_max: int = 1_000_000, chunk: int = 1 << 18) -> int:
    """Integer minimizer of (a/H + b)(t1 + t2 H) by direct evaluation."""
    best_h, best_t = 1, np.inf
    for lo in range(1, h_max + 1, chunk):
        h = np.arange(lo, min(lo + chunk, h_max + 1), dtype=np.float64)
        t = (a / h + b) * (t1 + t2 * h)
        i = int(np.argmin(t))
        if t[i] < best_t:
            best_t = float(t[i])
            best_h = int(h[i])
    return best_h


def time_to_target(records, f_initial: float, f_star: float, target: float):
    """(rounds, seconds) to the target, with monotone linear interpolation
    of the crossing time between round boundaries.  None when unreached."""
    denom = max(1.0, abs(f_star))
    prev_sub = (f_initial - f_star) / denom
    prev_t = 0.0
    cum = 0.0
    if prev_sub <= target:
        return 0, 0.0
    for rec in records:
        cum += rec.timings.t_tot
        sub = rec.suboptimality
        if sub <= target:
            if prev_sub == sub:
                return rec.round, cum
            frac = (prev_sub - target) / (prev_sub - sub)
            frac = min(max(frac, 0.0), 1.0)
            return rec.round, prev_t + frac * (cum - prev_t)
        prev_sub, prev_t = min(prev_sub, sub), cum
    return None, None


def sweep_h(cfg_base, h_grid: list[int], problem, transport) -> list[SweepPoint]:
    """Run the engine once per H and record rounds / wall time to target.

    Each run gets a fresh seed derived from the base seed so the sweep
    points are independent draws; unreached points are flagged rather than
    dropped.
    """
    from . import engine

    if not h_grid:
        raise ConfigurationError("sweep needs a nonempty H grid")
    points = []
    for i, h in enumerate(h_grid):
        cfg = replace(cfg_base, h=int(h), seed=cfg_base.seed + 1000 * i)
        result = engine.run(cfg, problem, transport)
        rounds, seconds = time_to_target(
            result.records, result.f_initial, result.f_star, cfg.target_suboptimality
        )
        points.append(
            SweepPoint(
                h=int(h),
                rounds_to_target=rounds,
                time_to_target=seconds,
                reached=rounds is not None,
                status=result.status,
            )
        )
    return points


def measure_t2(worker_state, trials: int, steps_per_trial: int = 1000,
               lam: float = 1.0, sigma_prime: float = 1.0,
               concurrency: int = 1) -> float:
    """Median seconds per SCD update on a worker's local block.

    ``concurrency`` runs the same benchmark on that many threads at once so
    the estimate reflects the in-process backend, where K workers share one
    interpreter and updates effectively serialize.
    """
    if trials <= 0:
        raise ConfigurationError("measure_t2 needs at least one trial")
    mat = worker_state.block
    if mat.n_cols == 0 or mat.nnz == 0:
        raise ConfigurationError("empty local block: no updates to time")

    sq = worker_state.column_sqnorms
    if sq is None:
        sq = mat.column_sqnorms()
    col_ptr, row_idx, values = mat.col_ptr, mat.row_idx, mat.values

    def one_pass(rng: np.random.Generator, steps: int) -> float:
        alpha = np.zeros(mat.n_cols)
        G = np.zeros(mat.n_rows)
        picks = rng.integers(0, mat.n_cols, size=steps)
        t0 = time.perf_counter()
        for i in picks:
            lo, hi = col_ptr[i], col_ptr[i + 1]
            rows = row_idx[lo:hi]
            vals = values[lo:hi]
            delta = (vals @ G[rows] - lam * alpha[i]) / (sigma_prime * sq[i] + lam)
            alpha[i] += delta
            G[rows] -= sigma_prime * delta * vals
        return time.perf_counter() - t0

    times = []
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        if concurrency <= 1:
            times.append(one_pass(rng, steps_per_trial) / steps_per_trial)
            continue
        barrier = threading.Barrier(concurrency)
        siblings = []

        def sibling(seed):
            r = np.random.default_rng(seed)
            barrier.wait()
            # siblings run longer so the timed pass stays contended throughout
            one_pass(r, 2 * steps_per_trial)

        for j in range(concurrency - 1):
            th = threading.Thread(target=sibling, args=(10_000 + j,), daemon=True)
            siblings.append(th)
            th.start()
        barrier.wait()
        times.append(one_pass(rng, steps_per_trial) / steps_per_trial)
        for th in siblings:
            th.join()
    return float(median(times))
