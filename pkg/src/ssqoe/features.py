"""Per-second input features from a streaming playout trace.

Channel order is fixed everywhere in this package:
    0 = STSQ  (per-second video quality score, raw VQA units)
    1 = PI    (playback indicator: 1 playing, 0 rebuffering)
    2 = T_R   (seconds elapsed since the end of the last rebuffering)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import ChannelNorm

CHANNEL_NAMES = ("stsq", "pi", "tr")

STSQ, PI, TR = 0, 1, 2


@dataclass(frozen=True, eq=False)
class SessionTrace:
    """One video session: per-second quality scores, stall flags, and the
    ground-truth continuous QoE, plus the metadata the evaluation
    protocol needs (content / playout-pattern identity, score scale)."""

    session_id: str
    stsq: np.ndarray
    stall: np.ndarray
    mos: np.ndarray
    content_id: str = ""
    pattern_id: str = ""
    scale_min: float = 0.0
    scale_max: float = 100.0
    vqa_name: str = ""
    vqa_inverted: bool = False

    def __post_init__(self):
        stsq = np.array(self.stsq, dtype=float)
        stall = np.asarray(self.stall)
        mos = np.array(self.mos, dtype=float)
        if stsq.ndim != 1 or stsq.shape != stall.shape or stsq.shape != mos.shape:
            raise ValidationError(
                f"session {self.session_id}: stsq/stall/mos must be equal-length "
                f"1-d sequences, got {stsq.shape}/{stall.shape}/{mos.shape}")
        if len(stsq) < 1:
            raise ValidationError(f"session {self.session_id}: empty trace")
        _check_binary(stall, self.session_id)
        stall = stall.astype(np.int8)
        if not (np.isfinite(stsq).all() and np.isfinite(mos).all()):
            raise ValidationError(f"session {self.session_id}: non-finite stsq or mos")
        if not self.scale_max > self.scale_min:
            raise ValidationError(
                f"session {self.session_id}: scaleMax must exceed scaleMin")
        for name, arr in (("stsq", stsq), ("stall", stall), ("mos", mos)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def duration(self) -> int:
        return len(self.stsq)


@dataclass(frozen=True, eq=False)
class FeatureSeries:
    """Raw (un-normalized) feature matrix, shape (T, m)."""

    values: np.ndarray
    channels: tuple[str, ...] = field(default=CHANNEL_NAMES)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1:
            raise ValidationError(f"feature matrix must be (T, m), got {values.shape}")
        if not np.isfinite(values).all():
            raise ValidationError("feature matrix contains non-finite values")
        if values.shape[1] != len(self.channels):
            raise ValidationError(
                f"{values.shape[1]} columns but {len(self.channels)} channel names")
        if self.channels == CHANNEL_NAMES:
            if not np.isin(values[:, PI], (0.0, 1.0)).all():
                raise ValidationError("PI column must be binary")
            if (values[:, TR] < 0).any():
                raise ValidationError("T_R column must be nonnegative")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


def _check_binary(stall, session_id=None):
    stall = np.asarray(stall)
    if stall.ndim != 1 or not np.isin(stall, (0, 1)).all():
        where = f" in session {session_id}" if session_id else ""
        raise ValidationError(f"stall flags{where} must be a 1-d 0/1 sequence")


def extract_pi(stall) -> np.ndarray:
    """PI(t) = 1 - stall(t): 1 while playing, 0 while rebuffering."""
    _check_binary(stall)
    return 1.0 - np.asarray(stall, dtype=float)


def extract_tr(stall) -> np.ndarray:
    """Seconds elapsed since the end of the most recent rebuffering.

    0 during a stall second; counts up by 1 per playing second after a
    stall ends.  Before any stall it ramps from 0 at playback start.
    """
    _check_binary(stall)
    stall = np.asarray(stall)
    out = np.zeros(len(stall))
    elapsed = 0
    for t, flag in enumerate(stall):
        if flag:
            out[t] = 0.0
            elapsed = 1
        else:
            out[t] = elapsed
            elapsed += 1
    return out


def build_features(trace: SessionTrace) -> FeatureSeries:
    """Assemble the 3-channel raw feature series (STSQ, PI, T_R) for one
    session.  No normalization happens here; that is fit at training time
    and recorded in the model."""
    cols = np.column_stack([
        trace.stsq.astype(float),
        extract_pi(trace.stall),
        extract_tr(trace.stall),
    ])
    return FeatureSeries(values=cols)


def fit_normalization(traces, features=None) -> tuple[ChannelNorm, ...]:
    """Fit the per-channel affine normalization over a training set.

    offset = channel min, scale = max - min (1 when degenerate), so
    training values map into [0, 1].  When the VQA metric is inverted
    (lower score = better quality, e.g. STRRED) channel 0 additionally
    flips to 1 - v so that larger always means better.

    `features` may supply pre-built raw feature matrices (one per trace,
    each (T, m)); by default the standard 3-channel series is used.
    """
    traces = list(traces)
    if not traces:
        raise ValidationError("cannot fit normalization on an empty training set")
    if features is None:
        mats = [build_features(tr).values for tr in traces]
    else:
        mats = [np.asarray(f, dtype=float) for f in features]
        if len(mats) != len(traces):
            raise ValidationError("features list must align with traces")
    stacked = np.concatenate(mats, axis=0)
    lo = stacked.min(axis=0)
    hi = stacked.max(axis=0)
    span = hi - lo
    inverted = bool(traces[0].vqa_inverted)
    if any(bool(tr.vqa_inverted) != inverted for tr in traces):
        raise ValidationError("training sessions disagree on vqaInverted")
    norms = []
    for ch in range(stacked.shape[1]):
        scale = float(span[ch]) if span[ch] > 0 else 1.0
        norms.append(ChannelNorm(offset=float(lo[ch]), scale=scale,
                                 inverted=inverted and ch == STSQ))
    return tuple(norms)
