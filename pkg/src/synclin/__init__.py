"""Distributed training engine for ridge regression with three synchronous
algorithms (CoCoA, mini-batch SCD, mini-batch SGD), pluggable transports,
per-round timing decomposition, and an autotuner for the communication/
computation trade-off parameter H."""

__version__ = "0.1.0"

from .datasets import (
    PartitionPlan,
    RowMajorMatrix,
    SparseMatrix,
    bundled_dataset_path,
    dump_libsvm,
    load_libsvm,
    local_block,
    make_synthetic,
    partition,
)
from .engine import AlgorithmConfig, RoundRecord, RunResult, run
from .objective import (
    RidgeProblem,
    Suboptimality,
    coordinate_gradient,
    objective_value,
    solve_exact,
    suboptimality,
)
from .perf import PerfFit, RoundTimings, fit_convergence, predict_h_opt, sweep_h
from .solvers import (
    LocalUpdate,
    WorkerState,
    cocoa_local_scd,
    minibatch_scd_local,
    minibatch_sgd_local,
)
from .transport import InProcessTransport, TcpTransport, make_transport, measure_t1

__all__ = [
    "AlgorithmConfig",
    "InProcessTransport",
    "LocalUpdate",
    "PartitionPlan",
    "PerfFit",
    "RidgeProblem",
    "RoundRecord",
    "RoundTimings",
    "RowMajorMatrix",
    "RunResult",
    "SparseMatrix",
    "Suboptimality",
    "TcpTransport",
    "WorkerState",
    "bundled_dataset_path",
    "cocoa_local_scd",
    "coordinate_gradient",
    "dump_libsvm",
    "fit_convergence",
    "load_libsvm",
    "local_block",
    "make_synthetic",
    "make_transport",
    "measure_t1",
    "minibatch_scd_local",
    "minibatch_sgd_local",
    "objective_value",
    "partition",
    "predict_h_opt",
    "run",
    "solve_exact",
    "suboptimality",
    "sweep_h",
]
