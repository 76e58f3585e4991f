"""Pydantic request/response models for the training service."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ExperimentRequest(BaseModel):
    """Shared experiment parameters; mirrors the CLI flags."""

    model_config = ConfigDict(populate_by_name=True)

    dataset: str
    algorithm: str = "cocoa"
    k: int = Field(default=1, ge=1)
    gamma: float = Field(default=1.0, gt=0)
    lam: float = Field(default=1.0, gt=0, alias="lambda")
    target: float = Field(default=1e-3, gt=0, le=1)
    backend: str = "inproc"
    injected_latency_ms: float = Field(default=0.0, ge=0)
    seed: int = 0
    max_rounds: int = Field(default=100_000, ge=1)


class TrainRequest(ExperimentRequest):
    h: str


class SweepRequest(ExperimentRequest):
    h_grid: list[str] = Field(min_length=1)


class TuneRequest(ExperimentRequest):
    h_grid: list[str] = Field(min_length=3)

    @model_validator(mode="after")
    def _distinct_points(self):
        if len(set(self.h_grid)) < 3:
            raise ValueError("tune needs an h grid with at least 3 distinct points")
        return self


class CompareEntry(BaseModel):
    algorithm: str
    h: str
    gamma: float = Field(default=1.0, gt=0)


class CompareRequest(ExperimentRequest):
    algorithm: str = "cocoa"  # unused; entries carry their own algorithm
    algos: list[CompareEntry] = Field(min_length=1)


class MeasureRequest(ExperimentRequest):
    t1_trials: int = Field(default=11, ge=1)


class RoundRow(BaseModel):
    round: int
    t_worker: float
    t_master: float
    t_overhead: float
    t_tot: float
    objective: float
    suboptimality: float


class TrainSummary(BaseModel):
    status: str
    reached_target: bool
    rounds: int
    rounds_to_target: int | None
    time_to_target_seconds: float | None
    final_suboptimality: float
    f_star: float
    f_initial: float
    total_time_seconds: float
    t_worker_total: float
    t_master_total: float
    t_overhead_total: float


class TrainResponse(BaseModel):
    dataset: str
    algorithm: str
    k: int
    h: int
    summary: TrainSummary
    rounds: list[RoundRow]


class SweepPointRow(BaseModel):
    h: int
    rounds_to_target: int | None
    time_to_target_seconds: float | None
    reached: bool
    status: str


class FitModel(BaseModel):
    a: float
    b: float
    r_squared: float
    degenerate: bool
    b_clamped: bool


class SweepResponse(BaseModel):
    dataset: str
    algorithm: str
    k: int
    points: list[SweepPointRow]
    fit: FitModel | None
    t1_seconds: float | None
    t2_seconds: float | None
    h_opt_predicted: int | None
    warning: str | None


class TuneResponse(SweepResponse):
    h_measured_argmin: int | None
    prediction_ratio: float | None
    t_predicted_seconds: float | None
    recommended_h: int | None


class CompareRow(BaseModel):
    algorithm: str
    h: int
    gamma: float
    status: str
    rounds_to_target: int | None
    time_to_target_seconds: float | None
    t_worker_total: float
    t_master_total: float
    t_overhead_total: float


class CompareResponse(BaseModel):
    dataset: str
    k: int
    target: float
    rows: list[CompareRow]


class MeasureResponse(BaseModel):
    dataset: str
    k: int
    backend: str
    payload_dim: int
    t1_seconds: float
    t2_seconds: float


class DatasetInfo(BaseModel):
    name: str
    path: str


class HealthResponse(BaseModel):
    status: str
    version: str
