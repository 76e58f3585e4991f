"""FastAPI service wrapping the training engine.

Jobs run synchronously in the request (FastAPI pushes sync endpoints onto a
worker thread pool); parsed datasets and their exact-solve oracles are cached
across requests, which is the point of running this as a service.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..datasets import BUNDLED, bundled_dataset_path
from ..errors import ConfigurationError, SynclinError
from ..experiments import (
    AlgoParams,
    ExperimentSpec,
    compare_job,
    measure_job,
    sweep_job,
    train_job,
    tune_job,
)
from ..reports import train_summary
from . import schemas

log = logging.getLogger(__name__)


def _spec_from(req: schemas.ExperimentRequest, **overrides) -> ExperimentSpec:
    return ExperimentSpec(
        dataset=req.dataset,
        algorithm=req.algorithm,
        k=req.k,
        gamma=req.gamma,
        lam=req.lam,
        target=req.target,
        backend=req.backend,
        injected_latency_ms=req.injected_latency_ms,
        seed=req.seed,
        max_rounds=req.max_rounds,
        **overrides,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="synclin service", version=__version__)

    @app.exception_handler(FileNotFoundError)
    async def _not_found(request: Request, exc: FileNotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(ConfigurationError)
    async def _bad_config(request: Request, exc: ConfigurationError):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(SynclinError)
    async def _domain_error(request: Request, exc: SynclinError):
        log.exception("job failed")
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.get("/datasets", response_model=list[schemas.DatasetInfo])
    def datasets():
        return [
            schemas.DatasetInfo(name=name, path=str(bundled_dataset_path(name)))
            for name in sorted(BUNDLED)
        ]

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        outcome = train_job(_spec_from(req, h=req.h))
        summary = train_summary(outcome)
        return schemas.TrainResponse(
            dataset=req.dataset,
            algorithm=req.algorithm,
            k=req.k,
            h=outcome.h_resolved,
            summary=schemas.TrainSummary(**{
                k: summary[k] for k in schemas.TrainSummary.model_fields
            }),
            rounds=[
                schemas.RoundRow(
                    round=r.round,
                    t_worker=r.timings.t_worker,
                    t_master=r.timings.t_master,
                    t_overhead=r.timings.t_overhead,
                    t_tot=r.timings.t_tot,
                    objective=r.objective,
                    suboptimality=r.suboptimality,
                )
                for r in outcome.result.records
            ],
        )

    def _sweep_response(model_cls, outcome, **extra):
        fit = outcome.fit
        return model_cls(
            dataset=outcome.spec.dataset,
            algorithm=outcome.spec.algorithm,
            k=outcome.spec.k,
            points=[
                schemas.SweepPointRow(
                    h=p.h,
                    rounds_to_target=p.rounds_to_target,
                    time_to_target_seconds=p.time_to_target,
                    reached=p.reached,
                    status=p.status,
                )
                for p in outcome.points
            ],
            fit=None if fit is None else schemas.FitModel(
                a=fit.a, b=fit.b, r_squared=fit.r_squared,
                degenerate=fit.degenerate, b_clamped=fit.b_clamped,
            ),
            t1_seconds=outcome.t1,
            t2_seconds=outcome.t2,
            h_opt_predicted=outcome.h_opt_predicted,
            warning=outcome.fit_warning,
            **extra,
        )

    @app.post("/sweep", response_model=schemas.SweepResponse)
    def sweep(req: schemas.SweepRequest):
        outcome = sweep_job(_spec_from(req, h_grid=req.h_grid))
        return _sweep_response(schemas.SweepResponse, outcome)

    @app.post("/tune", response_model=schemas.TuneResponse)
    def tune(req: schemas.TuneRequest):
        outcome = tune_job(_spec_from(req, h_grid=req.h_grid))
        return _sweep_response(
            schemas.TuneResponse,
            outcome.sweep,
            h_measured_argmin=outcome.h_measured_argmin,
            prediction_ratio=outcome.prediction_ratio,
            t_predicted_seconds=outcome.t_predicted,
            recommended_h=outcome.h_recommended,
        )

    @app.post("/compare", response_model=schemas.CompareResponse)
    def compare(req: schemas.CompareRequest):
        rows = compare_job(
            _spec_from(req),
            [AlgoParams(algorithm=e.algorithm, h=e.h, gamma=e.gamma) for e in req.algos],
        )
        return schemas.CompareResponse(
            dataset=req.dataset,
            k=req.k,
            target=req.target,
            rows=[
                schemas.CompareRow(
                    algorithm=r.algorithm,
                    h=r.h,
                    gamma=r.gamma,
                    status=r.status,
                    rounds_to_target=r.rounds_to_target,
                    time_to_target_seconds=r.time_to_target,
                    t_worker_total=r.t_worker_total,
                    t_master_total=r.t_master_total,
                    t_overhead_total=r.t_overhead_total,
                )
                for r in rows
            ],
        )

    @app.post("/measure", response_model=schemas.MeasureResponse)
    def measure(req: schemas.MeasureRequest):
        outcome = measure_job(_spec_from(req))
        return schemas.MeasureResponse(
            dataset=req.dataset,
            k=req.k,
            backend=req.backend,
            payload_dim=outcome.payload_dim,
            t1_seconds=outcome.t1_seconds,
            t2_seconds=outcome.t2_seconds,
        )

    return app
