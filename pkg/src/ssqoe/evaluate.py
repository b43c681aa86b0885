"""End-to-end evaluation: per-split training, test-session scoring, and
the leave-one-out report matching the per-database protocol.

Splits are independent and may run in parallel (`workers`); the report
is always assembled in session-id order, so the outcome does not depend
on scheduling.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .analysis import RankAnalysis, analyze
from .dataio import Dataset, SplitPlan, make_loocv_splits
from .features import FeatureSeries, build_features, extract_pi, extract_tr
from .identify import ModelConfig, TrainConfig, TrainReport, train
from .metrics import EvalScores, mean_scores, score_pair
from .model import QoeModel, simulate
from .version import __version__


def stamp(doc: dict) -> dict:
    """Add provenance to a report document.  These two fields are the only
    nondeterministic report content and are excluded from reproducibility
    comparisons (as is the wall-clock `timing` field)."""
    return {**doc,
            "generatedAt": datetime.now(timezone.utc).isoformat(),
            "toolVersion": __version__}


@dataclass(frozen=True, eq=False)
class SplitOutcome:
    session_id: str
    scores: EvalScores
    rank: RankAnalysis
    train_report: TrainReport
    yhat: np.ndarray
    mos: np.ndarray


@dataclass(frozen=True, eq=False)
class EvalReport:
    dataset_name: str
    vqa_name: str
    mode: str
    model_config: ModelConfig
    train_config: TrainConfig
    per_session: tuple[tuple[str, EvalScores], ...]
    mean: EvalScores
    pooled: EvalScores
    rank: RankAnalysis
    rank_per_split: tuple[dict, ...]
    splits: tuple[SplitPlan, ...]
    timing: float

    def as_doc(self) -> dict:
        return {
            "schemaVersion": 1,
            "dataset": self.dataset_name,
            "vqaName": self.vqa_name,
            "mode": self.mode,
            "modelConfig": {"m": self.model_config.m, "r": self.model_config.r,
                            "s": self.model_config.s},
            "trainConfig": self.train_config.as_doc(),
            "perSession": [
                {"sessionId": sid, **scores.as_doc()} for sid, scores in self.per_session
            ],
            "meanScores": self.mean.as_doc(),
            "pooledScores": self.pooled.as_doc(),
            "rank": self.rank.as_doc(),
            "rankPerSplit": list(self.rank_per_split),
            "splits": [
                {"testSessionId": p.test_session_id,
                 "trainSessionIds": list(p.train_session_ids)}
                for p in self.splits
            ],
            "timing": self.timing,
        }


def predict_trace(model: QoeModel, stsq, stall, x0=None) -> np.ndarray:
    """Per-second QoE estimates for one raw playout trace."""
    feats = FeatureSeries(np.column_stack([
        np.asarray(stsq, dtype=float),
        extract_pi(stall),
        extract_tr(stall),
    ]))
    return simulate(model, feats, x0)


def run_split(ds: Dataset, plan: SplitPlan, cfg: TrainConfig,
              mc: ModelConfig) -> SplitOutcome:
    """Train on a split's eligible sessions and score the held-out one."""
    train_traces = ds.subset(plan.train_session_ids)
    test = ds.session(plan.test_session_id)
    model, report = train(train_traces, cfg, mc)
    yhat = simulate(model, build_features(test), model.ss.x0)
    scores = score_pair(yhat, test.mos, ds.scale_min, ds.scale_max)
    return SplitOutcome(
        session_id=test.session_id,
        scores=scores,
        rank=analyze(model.ss, cfg.rank_tol),
        train_report=report,
        yhat=yhat,
        mos=np.asarray(test.mos, dtype=float),
    )


def _run_split_args(args):
    return run_split(*args)


def run_loocv(ds: Dataset, cfg: TrainConfig | None = None,
              mc: ModelConfig | None = None, mode: str = "netflix",
              workers: int = 1) -> EvalReport:
    """The full leave-one-out protocol: one training run per held-out
    session, scored at its database scale, with per-session, mean, and
    pooled (concatenated) measures plus the rank analysis of the trained
    state spaces."""
    cfg = cfg or TrainConfig()
    mc = mc or ModelConfig()
    started = time.perf_counter()
    plans = make_loocv_splits(ds, mode)
    jobs = [(ds, plan, cfg, mc) for plan in plans]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_split_args, jobs))
    else:
        outcomes = [run_split(*job) for job in jobs]

    per_session = tuple((o.session_id, o.scores) for o in outcomes)
    pooled = score_pair(
        np.concatenate([o.yhat for o in outcomes]),
        np.concatenate([o.mos for o in outcomes]),
        ds.scale_min, ds.scale_max,
    )
    rank_per_split = tuple(
        {
            "sessionId": o.session_id,
            "controllable": o.rank.controllable,
            "observable": o.rank.observable,
            "spectralRadiusA": o.rank.spectral_radius_a,
            "finalObjective": o.train_report.final_objective,
        }
        for o in outcomes
    )
    return EvalReport(
        dataset_name=ds.name,
        vqa_name=ds.sessions[0].vqa_name,
        mode=mode,
        model_config=mc,
        train_config=cfg,
        per_session=per_session,
        mean=mean_scores(o.scores for o in outcomes),
        pooled=pooled,
        rank=outcomes[0].rank,
        rank_per_split=rank_per_split,
        splits=tuple(plans),
        timing=time.perf_counter() - started,
    )
