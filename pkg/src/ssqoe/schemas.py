"""Pydantic request/response models for the HTTP service.

Field names match the on-disk JSON contracts exactly (camelCase), so a
model document accepted by the service is byte-compatible with the model
file format, and a dataset payload mirrors the manifest + CSV + sidecar
content inline.
"""

from __future__ import annotations

from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from .dataio import Dataset, GeneratorSpec
from .errors import ValidationError
from .features import SessionTrace
from .identify import TrainConfig
from .model import ModelConfig, QoeModel, model_from_doc, model_to_doc


class ChannelNormDoc(BaseModel):
    offset: float
    scale: float
    inverted: bool = False


class ModelConfigDoc(BaseModel):
    m: int = 3
    r: int = 3
    s: Optional[int] = None


class ModelDoc(BaseModel):
    schemaVersion: int = 1
    config: ModelConfigDoc
    beta: list[list[float]]
    A: list[list[float]]
    B: list[list[float]]
    C: list[float]
    D: list[float]
    x0: list[float]
    featureNorm: list[ChannelNormDoc]


class TrainConfigDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    restarts: int = 8
    maxIters: int = 60
    tolObj: float = 1e-7
    seed: int = 0
    rankTol: float = 0.0
    stepInit: float = 1e-2
    minObjective: float = 1e-12


class SessionDoc(BaseModel):
    sessionId: str
    contentId: str = ""
    patternId: str = ""
    stsq: list[float]
    stall: list[int]
    mos: list[float]
    vqaName: str = ""
    vqaInverted: bool = False


class DatasetDoc(BaseModel):
    name: str = "dataset"
    scaleMin: float
    scaleMax: float
    sessions: list[SessionDoc]


class TraceDoc(BaseModel):
    sessionId: str = "trace"
    stsq: list[float]
    stall: list[int]
    mos: Optional[list[float]] = None


class EvalScoresDoc(BaseModel):
    lcc: float
    srocc: float
    rmseN: float
    n: float


class PerSessionScoreDoc(EvalScoresDoc):
    sessionId: str


class RankAnalysisDoc(BaseModel):
    controllabilityRank: int
    observabilityRank: int
    s: int
    controllable: bool
    observable: bool
    rankTol: float
    singularValuesCtrl: list[float]
    singularValuesObs: list[float]
    spectralRadiusA: float
    generatedAt: Optional[str] = None
    toolVersion: Optional[str] = None


class TrainReportDoc(BaseModel):
    finalObjective: float
    perRestartObjectives: list[Optional[float]]
    chosenRestart: int
    rankAOk: bool
    rankBOk: bool
    spectralRadiusA: float
    generatedAt: Optional[str] = None
    toolVersion: Optional[str] = None


class RankPerSplitDoc(BaseModel):
    sessionId: str
    controllable: bool
    observable: bool
    spectralRadiusA: float
    finalObjective: float


class SplitPlanDoc(BaseModel):
    testSessionId: str
    trainSessionIds: list[str]


class EvalReportDoc(BaseModel):
    schemaVersion: int = 1
    dataset: str
    vqaName: str
    mode: str
    modelConfig: ModelConfigDoc
    trainConfig: TrainConfigDoc
    perSession: list[PerSessionScoreDoc]
    meanScores: EvalScoresDoc
    pooledScores: EvalScoresDoc
    rank: RankAnalysisDoc
    rankPerSplit: list[RankPerSplitDoc]
    splits: list[SplitPlanDoc]
    timing: float
    generatedAt: Optional[str] = None
    toolVersion: Optional[str] = None


class GeneratorSpecDoc(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sessions: int = 12
    duration: int = 180
    stallProb: float = 0.04
    stallDurMin: int = 1
    stallDurMax: int = 4
    walkStep: float = 0.05
    contents: Optional[int] = None
    patterns: Optional[int] = None
    model: Union[Literal["random"], ModelDoc] = "random"
    modelOrder: int = 3
    noiseRel: float = 0.0
    vqaName: str = "synthvqa"
    vqaInverted: bool = False
    name: str = "synthetic"


class SynthSummaryDoc(BaseModel):
    sessions: int
    totalSeconds: int
    stallSeconds: int


# -- requests / responses ---------------------------------------------------

class TrainRequest(BaseModel):
    dataset: DatasetDoc
    config: TrainConfigDoc = TrainConfigDoc()
    modelConfig: ModelConfigDoc = ModelConfigDoc()


class TrainResponse(BaseModel):
    model: ModelDoc
    report: TrainReportDoc
    log: list[tuple[int, int, float]]


class PredictRequest(BaseModel):
    model: ModelDoc
    trace: TraceDoc
    scaleMin: Optional[float] = None
    scaleMax: Optional[float] = None


class PredictResponse(BaseModel):
    sessionId: str
    yhat: list[float]
    scores: Optional[EvalScoresDoc] = None


class LoocvRequest(BaseModel):
    dataset: DatasetDoc
    config: TrainConfigDoc = TrainConfigDoc()
    modelConfig: ModelConfigDoc = ModelConfigDoc()
    mode: Literal["netflix", "lfovia"] = "netflix"
    workers: int = 1


class LoocvResponse(BaseModel):
    report: EvalReportDoc


class AnalyzeRequest(BaseModel):
    model: ModelDoc
    rankTol: float = 0.0


class SynthRequest(BaseModel):
    spec: GeneratorSpecDoc = GeneratorSpecDoc()
    seed: int = 0


class SynthResponse(BaseModel):
    dataset: DatasetDoc
    model: ModelDoc
    summary: SynthSummaryDoc


# -- converters between wire docs and core types ----------------------------

def model_config_from_doc(doc: ModelConfigDoc) -> ModelConfig:
    mc = ModelConfig(m=doc.m, r=doc.r)
    if doc.s is not None and doc.s != mc.s:
        raise ValidationError(f"modelConfig.s={doc.s} but m*r={mc.s}")
    return mc


def train_config_from_doc(doc: TrainConfigDoc) -> TrainConfig:
    return TrainConfig.from_doc(doc.model_dump())


def qoe_model_from_doc(doc: ModelDoc) -> QoeModel:
    return model_from_doc(doc.model_dump())


def qoe_model_to_doc(model: QoeModel) -> ModelDoc:
    return ModelDoc.model_validate(model_to_doc(model))


def dataset_from_doc(doc: DatasetDoc) -> Dataset:
    sessions = tuple(
        SessionTrace(
            session_id=s.sessionId,
            content_id=s.contentId,
            pattern_id=s.patternId,
            stsq=np.asarray(s.stsq, dtype=float),
            stall=np.asarray(s.stall),
            mos=np.asarray(s.mos, dtype=float),
            scale_min=doc.scaleMin,
            scale_max=doc.scaleMax,
            vqa_name=s.vqaName,
            vqa_inverted=s.vqaInverted,
        )
        for s in doc.sessions
    )
    return Dataset(name=doc.name, scale_min=doc.scaleMin, scale_max=doc.scaleMax,
                   sessions=sessions)


def dataset_to_doc(ds: Dataset) -> DatasetDoc:
    return DatasetDoc(
        name=ds.name,
        scaleMin=ds.scale_min,
        scaleMax=ds.scale_max,
        sessions=[
            SessionDoc(
                sessionId=s.session_id,
                contentId=s.content_id,
                patternId=s.pattern_id,
                stsq=[float(v) for v in s.stsq],
                stall=[int(v) for v in s.stall],
                mos=[float(v) for v in s.mos],
                vqaName=s.vqa_name,
                vqaInverted=s.vqa_inverted,
            )
            for s in ds.sessions
        ],
    )


def generator_spec_from_doc(doc: GeneratorSpecDoc) -> GeneratorSpec:
    model = doc.model if isinstance(doc.model, str) else doc.model.model_dump()
    return GeneratorSpec(
        sessions=doc.sessions, duration=doc.duration, stall_prob=doc.stallProb,
        stall_dur_min=doc.stallDurMin, stall_dur_max=doc.stallDurMax,
        walk_step=doc.walkStep, contents=doc.contents, patterns=doc.patterns,
        model=model, model_order=doc.modelOrder, noise_rel=doc.noiseRel,
        vqa_name=doc.vqaName, vqa_inverted=doc.vqaInverted, name=doc.name,
    )
