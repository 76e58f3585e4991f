"""Job-level orchestration shared by the service and the CLI.

An :class:`ExperimentSpec` names a dataset (bundled name or path) and the
run parameters; jobs load data through a small cache so a long-lived service
pays parsing and the exact-solve oracle once per dataset/lambda pair.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .datasets import BY_ROW, load_libsvm, local_block, partition, resolve_dataset
from .engine import AlgorithmConfig, RunResult, measure_round_trip, run
from .errors import CommunicationFreeRegime, ConfigurationError, FitRankError
from .objective import RidgeProblem
from .perf import PerfFit, SweepPoint, fit_convergence, measure_t2, predict_h_opt, sweep_h
from .solvers import COCOA, MB_SGD, make_column_worker_state
from .transport import make_transport

T1_TRIALS = 11
T2_TRIALS = 5


@dataclass
class ExperimentSpec:
    """One experiment request: dataset, algorithm, and run parameters.

    ``h`` accepts an absolute count ("5000") or a fraction of the per-worker
    partition size ("0.2x").  Exactly one of ``h`` / ``h_grid`` must be set,
    except for compare jobs, which carry per-algorithm entries instead.
    """

    dataset: str
    algorithm: str = COCOA
    k: int = 1
    h: str | None = None
    h_grid: list[str] | None = None
    gamma: float = 1.0
    lam: float = 1.0
    target: float = 1e-3
    backend: str = "inproc"
    injected_latency_ms: float = 0.0
    seed: int = 0
    max_rounds: int = 100_000

    def validate(self, need_h: bool = True) -> None:
        if need_h and (self.h is None) == (self.h_grid is None):
            raise ConfigurationError("exactly one of h / h_grid must be given")
        path = resolve_dataset(self.dataset)
        if not path.exists():
            raise FileNotFoundError(f"dataset not found: {path}")


@dataclass
class AlgoParams:
    """Per-algorithm tuned parameters for compare jobs."""

    algorithm: str
    h: str
    gamma: float = 1.0


@dataclass
class TrainOutcome:
    spec: ExperimentSpec
    h_resolved: int
    result: RunResult
    rounds_to_target: int | None
    time_to_target: float | None


@dataclass
class SweepOutcome:
    spec: ExperimentSpec
    points: list[SweepPoint]
    fit: PerfFit | None
    t1: float
    t2: float
    h_opt_predicted: int | None
    fit_warning: str | None = None


@dataclass
class TuneOutcome:
    sweep: SweepOutcome
    h_measured_argmin: int | None
    t_predicted: float | None

    @property
    def h_recommended(self) -> int | None:
        return self.h_measured_argmin

    @property
    def prediction_ratio(self) -> float | None:
        if self.h_measured_argmin and self.sweep.h_opt_predicted:
            return self.sweep.h_opt_predicted / self.h_measured_argmin
        return None


@dataclass
class CompareRow:
    algorithm: str
    h: int
    gamma: float
    status: str
    rounds_to_target: int | None
    time_to_target: float | None
    t_worker_total: float
    t_master_total: float
    t_overhead_total: float


@dataclass
class MeasureOutcome:
    payload_dim: int
    t1_seconds: float
    t2_seconds: float


class _ProblemCache:
    """Parsed datasets and their exact-solve oracles, keyed by path state."""

    def __init__(self):
        self._lock = threading.Lock()
        self._data: dict = {}

    def get(self, dataset: str, lam: float) -> RidgeProblem:
        path = resolve_dataset(dataset)
        if not path.exists():
            raise FileNotFoundError(f"dataset not found: {path}")
        key = (str(path), path.stat().st_mtime_ns, float(lam))
        with self._lock:
            if key not in self._data:
                mat, y = load_libsvm(path)
                self._data[key] = RidgeProblem(mat, y, lam=lam)
            return self._data[key]


_problems = _ProblemCache()


def load_problem(spec: ExperimentSpec) -> RidgeProblem:
    return _problems.get(spec.dataset, spec.lam)


def resolve_h(h_spec: str | int, problem: RidgeProblem, algorithm: str, k: int) -> int:
    """Absolute H, or a fraction of the mean per-worker partition size."""
    if isinstance(h_spec, (int, np.integer)):
        return int(h_spec)
    text = str(h_spec).strip().lower()
    total = problem.m if algorithm == MB_SGD else problem.n
    if text.endswith("x"):
        frac = float(text[:-1])
        if frac <= 0:
            raise ConfigurationError(f"H fraction must be positive, got {h_spec!r}")
        return max(1, round(frac * total / k))
    value = int(text)
    if value < 1:
        raise ConfigurationError(f"H must be >= 1, got {h_spec!r}")
    return value


def build_config(spec: ExperimentSpec, problem: RidgeProblem, h: int,
                 algorithm: str | None = None, gamma: float | None = None) -> AlgorithmConfig:
    return AlgorithmConfig(
        algorithm=algorithm or spec.algorithm,
        h=h,
        k=spec.k,
        gamma=spec.gamma if gamma is None else gamma,
        lam=spec.lam,
        max_rounds=spec.max_rounds,
        target_suboptimality=spec.target,
        seed=spec.seed,
    )


def _transport(spec: ExperimentSpec):
    return make_transport(spec.backend, spec.k, spec.injected_latency_ms / 1000.0)


def train_job(spec: ExperimentSpec) -> TrainOutcome:
    spec.validate()
    if spec.h is None:
        raise ConfigurationError("train needs a single H (use sweep/tune for grids)")
    problem = load_problem(spec)
    h = resolve_h(spec.h, problem, spec.algorithm, spec.k)
    cfg = build_config(spec, problem, h)
    result = run(cfg, problem, _transport(spec))
    from .perf import time_to_target

    rounds, seconds = time_to_target(result.records, result.f_initial,
                                     result.f_star, spec.target)
    return TrainOutcome(spec=spec, h_resolved=h, result=result,
                        rounds_to_target=rounds, time_to_target=seconds)


def _measure_costs(spec: ExperimentSpec, problem: RidgeProblem,
                   cfg: AlgorithmConfig) -> tuple[float, float]:
    """(t1, t2): zero-work round trip and per-update compute time.

    t2 is benched on the heaviest worker block, with ``k`` concurrent bench
    threads for the in-process backend so the number reflects workers
    sharing one interpreter.
    """
    t1 = measure_round_trip(cfg, problem, _transport(spec), trials=T1_TRIALS)
    plan = partition(problem.A, cfg.k, mode=cfg.partition_mode)
    heaviest = int(np.argmax(plan.nnz_per_part))
    bench_cfg = replace(cfg, algorithm=COCOA) if cfg.algorithm == MB_SGD else cfg
    block = local_block(problem.A, partition(problem.A, cfg.k), heaviest)
    state = make_column_worker_state(heaviest, block, seed=0)
    concurrency = cfg.k if spec.backend == "inproc" else 1
    t2 = measure_t2(state, trials=T2_TRIALS, lam=cfg.lam,
                    sigma_prime=bench_cfg.sigma_prime, concurrency=concurrency)
    return t1, t2


def sweep_job(spec: ExperimentSpec, measure: bool = True) -> SweepOutcome:
    spec.validate()
    if not spec.h_grid:
        raise ConfigurationError("sweep needs an h grid")
    problem = load_problem(spec)
    grid = sorted({resolve_h(h, problem, spec.algorithm, spec.k) for h in spec.h_grid})
    cfg = build_config(spec, problem, grid[0])
    points = sweep_h(cfg, grid, problem, _transport(spec))

    fit = None
    warning = None
    reached = [(p.h, p.rounds_to_target) for p in points if p.reached]
    if len(reached) >= 3:
        try:
            fit = fit_convergence(reached)
            if fit.degenerate:
                warning = "degenerate fit: rounds-to-target do not vary with H"
        except (ConfigurationError, FitRankError) as exc:  # pragma: no cover
            warning = str(exc)
    else:
        warning = f"only {len(reached)} grid points reached the target; no fit"

    t1 = t2 = float("nan")
    h_opt = None
    if measure:
        t1, t2 = _measure_costs(spec, problem, cfg)
        if fit is not None and not fit.degenerate:
            try:
                h_opt = predict_h_opt(fit, t1, t2).h_opt
            except CommunicationFreeRegime:
                warning = "fitted b == 0: larger H always better under the model"
    return SweepOutcome(spec=spec, points=points, fit=fit, t1=t1, t2=t2,
                        h_opt_predicted=h_opt, fit_warning=warning)


def refined_argmin(points: list[SweepPoint]) -> int | None:
    """Grid argmin of time-to-target, refined by a log-space parabola."""
    reached = [p for p in points if p.reached and p.time_to_target is not None]
    if not reached:
        return None
    reached.sort(key=lambda p: p.h)
    times = np.array([p.time_to_target for p in reached])
    hs = np.array([float(p.h) for p in reached])
    i = int(np.argmin(times))
    if 0 < i < len(reached) - 1:
        x = np.log(hs[i - 1:i + 2])
        t = times[i - 1:i + 2]
        denom = (x[0] - x[1]) * (x[0] - x[2]) * (x[1] - x[2])
        a = (x[2] * (t[1] - t[0]) + x[1] * (t[0] - t[2]) + x[0] * (t[2] - t[1])) / denom
        bb = (x[2] ** 2 * (t[0] - t[1]) + x[1] ** 2 * (t[2] - t[0]) + x[0] ** 2 * (t[1] - t[2])) / denom
        if a > 0:
            vertex = -bb / (2 * a)
            vertex = min(max(vertex, x[0]), x[2])
            return max(1, round(float(np.exp(vertex))))
    return int(hs[i])


def tune_job(spec: ExperimentSpec) -> TuneOutcome:
    sweep = sweep_job(spec, measure=True)
    argmin_h = refined_argmin(sweep.points)
    t_pred = None
    if sweep.fit is not None and not sweep.fit.degenerate and sweep.fit.b > 0:
        t_pred = predict_h_opt(sweep.fit, sweep.t1, sweep.t2).t_predicted
    return TuneOutcome(sweep=sweep, h_measured_argmin=argmin_h, t_predicted=t_pred)


def compare_job(spec: ExperimentSpec, algos: list[AlgoParams]) -> list[CompareRow]:
    spec.validate(need_h=False)
    if not algos:
        raise ConfigurationError("compare needs at least one algorithm entry")
    problem = load_problem(spec)
    rows = []
    from .perf import time_to_target

    for entry in algos:
        h = resolve_h(entry.h, problem, entry.algorithm, spec.k)
        cfg = build_config(spec, problem, h, algorithm=entry.algorithm, gamma=entry.gamma)
        result = run(cfg, problem, _transport(spec))
        rounds, seconds = time_to_target(result.records, result.f_initial,
                                         result.f_star, spec.target)
        rows.append(
            CompareRow(
                algorithm=entry.algorithm,
                h=h,
                gamma=entry.gamma,
                status=result.status,
                rounds_to_target=rounds,
                time_to_target=seconds,
                t_worker_total=sum(r.timings.t_worker for r in result.records),
                t_master_total=sum(r.timings.t_master for r in result.records),
                t_overhead_total=sum(r.timings.t_overhead for r in result.records),
            )
        )
    return rows


def measure_job(spec: ExperimentSpec) -> MeasureOutcome:
    spec.validate(need_h=False)
    problem = load_problem(spec)
    cfg = build_config(spec, problem, h=1)
    t1, t2 = _measure_costs(spec, problem, cfg)
    dim = problem.n if spec.algorithm == MB_SGD else problem.m
    return MeasureOutcome(payload_dim=dim, t1_seconds=t1, t2_seconds=t2)
