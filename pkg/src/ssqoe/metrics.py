"""Performance measures for continuous QoE prediction: Pearson LCC,
Spearman SROCC (average ranks on ties), and RMSE normalized by the
database score range, reported in percent."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ValidationError


class DegenerateInputWarning(UserWarning):
    """A correlation input had zero variance; the value was defined as 0."""


@dataclass(frozen=True)
class EvalScores:
    lcc: float
    srocc: float
    rmse_n: float
    n: float

    def as_doc(self) -> dict:
        return {"lcc": self.lcc, "srocc": self.srocc, "rmseN": self.rmse_n, "n": self.n}


def _pair(pred, truth, min_len):
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.ndim != 1 or pred.shape != truth.shape:
        raise ValidationError(
            f"pred and truth must be equal-length 1-d sequences, "
            f"got {pred.shape} and {truth.shape}")
    if len(pred) < min_len:
        raise ValidationError(f"need at least {min_len} samples, got {len(pred)}")
    return pred, truth


def _pearson(p, t) -> float:
    dp = p - p.mean()
    dt = t - t.mean()
    sp = float(dp @ dp)
    st = float(dt @ dt)
    if sp == 0.0 or st == 0.0:
        warnings.warn("zero-variance input, correlation defined as 0",
                      DegenerateInputWarning, stacklevel=3)
        return 0.0
    return float(dp @ dt) / np.sqrt(sp * st)


def lcc(pred, truth) -> float:
    """Pearson linear correlation coefficient."""
    pred, truth = _pair(pred, truth, min_len=2)
    return _pearson(pred, truth)


def srocc(pred, truth) -> float:
    """Spearman rank-order correlation: Pearson on fractional ranks."""
    pred, truth = _pair(pred, truth, min_len=2)
    return _pearson(rankdata(pred), rankdata(truth))


def rmse_n(pred, truth, scale_min: float, scale_max: float) -> float:
    """100 * RMSE / (scale_max - scale_min): RMSE as percent of score range."""
    pred, truth = _pair(pred, truth, min_len=1)
    if not scale_max > scale_min:
        raise ValidationError("scale_max must exceed scale_min")
    return 100.0 * float(np.sqrt(np.mean((pred - truth) ** 2))) / (scale_max - scale_min)


def score_pair(pred, truth, scale_min: float, scale_max: float) -> EvalScores:
    """All three measures for one prediction/ground-truth pair."""
    return EvalScores(
        lcc=lcc(pred, truth),
        srocc=srocc(pred, truth),
        rmse_n=rmse_n(pred, truth, scale_min, scale_max),
        n=float(len(np.asarray(pred))),
    )


def mean_scores(scores) -> EvalScores:
    """Unweighted mean of per-session scores."""
    scores = list(scores)
    if not scores:
        raise ValidationError("cannot average an empty list of scores")
    return EvalScores(
        lcc=float(np.mean([s.lcc for s in scores])),
        srocc=float(np.mean([s.srocc for s in scores])),
        rmse_n=float(np.mean([s.rmse_n for s in scores])),
        n=float(np.mean([s.n for s in scores])),
    )
