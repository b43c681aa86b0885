"""Stateless HTTP service wrapping the core package.

Every endpoint is JSON-in / JSON-out with the payload carrying all data
inline (no server-side filesystem access), so the service can score or
train for any number of clients.  Run with:

    uvicorn ssqoe.service:app
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import schemas
from .errors import NumericOverflowError, QoeError, TrainingError, ValidationError
from .evaluate import predict_trace, run_loocv, stamp
from .analysis import analyze
from .dataio import generate_synthetic
from .identify import train
from .metrics import score_pair
from .version import __version__

app = FastAPI(title="ssqoe", version=__version__,
              description="Continuous video QoE prediction service")


def _error_response(status: int, error_type: str, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"detail": str(exc), "errorType": error_type})


@app.exception_handler(ValidationError)
async def _validation_handler(request: Request, exc: ValidationError):
    return _error_response(422, "validation", exc)


@app.exception_handler(TrainingError)
async def _training_handler(request: Request, exc: TrainingError):
    return _error_response(500, "training", exc)


@app.exception_handler(NumericOverflowError)
async def _numeric_handler(request: Request, exc: NumericOverflowError):
    return _error_response(500, "numeric", exc)


@app.exception_handler(QoeError)
async def _qoe_handler(request: Request, exc: QoeError):
    return _error_response(400, "error", exc)


@app.get("/v1/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/v1/train", response_model=schemas.TrainResponse)
def train_endpoint(req: schemas.TrainRequest):
    ds = schemas.dataset_from_doc(req.dataset)
    cfg = schemas.train_config_from_doc(req.config)
    mc = schemas.model_config_from_doc(req.modelConfig)
    log: list = []
    model, report = train(ds.sessions, cfg, mc, iteration_log=log)
    return schemas.TrainResponse(
        model=schemas.qoe_model_to_doc(model),
        report=schemas.TrainReportDoc.model_validate(stamp(report.as_doc())),
        log=log,
    )


@app.post("/v1/predict", response_model=schemas.PredictResponse)
def predict_endpoint(req: schemas.PredictRequest):
    model = schemas.qoe_model_from_doc(req.model)
    yhat = predict_trace(model, req.trace.stsq, req.trace.stall)
    scores = None
    if (req.trace.mos is not None and req.scaleMin is not None
            and req.scaleMax is not None and len(req.trace.mos) >= 2):
        s = score_pair(yhat, req.trace.mos, req.scaleMin, req.scaleMax)
        scores = schemas.EvalScoresDoc.model_validate(s.as_doc())
    return schemas.PredictResponse(sessionId=req.trace.sessionId,
                                   yhat=[float(v) for v in yhat], scores=scores)


@app.post("/v1/loocv", response_model=schemas.LoocvResponse)
def loocv_endpoint(req: schemas.LoocvRequest):
    ds = schemas.dataset_from_doc(req.dataset)
    cfg = schemas.train_config_from_doc(req.config)
    mc = schemas.model_config_from_doc(req.modelConfig)
    report = run_loocv(ds, cfg, mc, mode=req.mode, workers=req.workers)
    return schemas.LoocvResponse(
        report=schemas.EvalReportDoc.model_validate(stamp(report.as_doc())))


@app.post("/v1/analyze", response_model=schemas.RankAnalysisDoc)
def analyze_endpoint(req: schemas.AnalyzeRequest):
    model = schemas.qoe_model_from_doc(req.model)
    result = analyze(model.ss, req.rankTol)
    return schemas.RankAnalysisDoc.model_validate(stamp(result.as_doc()))


@app.post("/v1/synth", response_model=schemas.SynthResponse)
def synth_endpoint(req: schemas.SynthRequest):
    spec = schemas.generator_spec_from_doc(req.spec)
    ds, truth = generate_synthetic(spec, seed=req.seed)
    stall_seconds = sum(int(s.stall.sum()) for s in ds.sessions)
    total_seconds = sum(s.duration for s in ds.sessions)
    return schemas.SynthResponse(
        dataset=schemas.dataset_to_doc(ds),
        model=schemas.qoe_model_to_doc(truth),
        summary=schemas.SynthSummaryDoc(sessions=len(ds.sessions),
                                        totalSeconds=total_seconds,
                                        stallSeconds=stall_seconds),
    )
