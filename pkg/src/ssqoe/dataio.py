"""Dataset loading/writing, the leave-one-out split protocol, and the
synthetic-session generator used as a desk-scale oracle.

On disk a dataset is a directory holding `manifest.json`
({name, scaleMin, scaleMax, sessions:[{csv, meta}]}), one CSV per session
with header `t,stsq,stall,mos` (t from 0, unit stride), and one metadata
sidecar JSON per session ({sessionId, contentId, patternId, scaleMin,
scaleMax, vqaName, vqaInverted}).  CSV numbers are written with 9
significant digits; that encoding is idempotent after one round trip.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis
from .errors import DataFormatError, ProtocolError, ValidationError
from .features import SessionTrace, build_features
from .model import (ChannelNorm, ModelConfig, NonlinearityParams, QoeModel,
                    StateSpaceParams, model_from_doc, model_to_doc, simulate)

_CSV_HEADER = ["t", "stsq", "stall", "mos"]

LOOCV_MODES = ("netflix", "lfovia")


def _fmt(x: float) -> str:
    return "%.9g" % x


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    scale_min: float
    scale_max: float
    sessions: tuple[SessionTrace, ...]

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        if not self.sessions:
            raise ValidationError(f"dataset {self.name!r} has no sessions")
        ids = [s.session_id for s in self.sessions]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"dataset {self.name!r} has duplicate session ids")
        if not self.scale_max > self.scale_min:
            raise ValidationError("scaleMax must exceed scaleMin")
        for s in self.sessions:
            if s.scale_min != self.scale_min or s.scale_max != self.scale_max:
                raise ValidationError(
                    f"session {s.session_id} scale differs from the database scale")

    def session(self, session_id: str) -> SessionTrace:
        for s in self.sessions:
            if s.session_id == session_id:
                return s
        raise ValidationError(f"unknown session id {session_id!r}")

    def subset(self, session_ids) -> list[SessionTrace]:
        return [self.session(sid) for sid in session_ids]


@dataclass(frozen=True)
class SplitPlan:
    test_session_id: str
    train_session_ids: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "train_session_ids", tuple(self.train_session_ids))
        if self.test_session_id in self.train_session_ids:
            raise ValidationError("test session cannot appear in its own training set")


# ---------------------------------------------------------------------------
# Loading / writing

def _parse_number(text, kind, session_id, row):
    try:
        return float(text)
    except ValueError:
        raise DataFormatError(f"{kind} value {text!r} is not a number",
                              session_id=session_id, row=row) from None


def _read_session_csv(path: Path, session_id: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError("empty CSV", session_id=session_id, row=1) from None
        if [h.strip() for h in header] != _CSV_HEADER:
            raise DataFormatError(
                f"CSV header must be {','.join(_CSV_HEADER)!r}, got {','.join(header)!r}",
                session_id=session_id, row=1)
        t_vals, stsq, stall, mos = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise DataFormatError(f"expected 4 columns, got {len(row)}",
                                      session_id=session_id, row=row_no)
            t = _parse_number(row[0], "t", session_id, row_no)
            if t != len(t_vals):
                raise DataFormatError(
                    f"t must start at 0 with unit stride, got {row[0]}",
                    session_id=session_id, row=row_no)
            flag = _parse_number(row[2], "stall", session_id, row_no)
            if flag not in (0.0, 1.0):
                raise DataFormatError(f"stall must be 0 or 1, got {row[2]}",
                                      session_id=session_id, row=row_no)
            t_vals.append(t)
            stsq.append(_parse_number(row[1], "stsq", session_id, row_no))
            stall.append(int(flag))
            mos.append(_parse_number(row[3], "mos", session_id, row_no))
        if not t_vals:
            raise DataFormatError("CSV has no data rows", session_id=session_id, row=1)
    return np.array(stsq), np.array(stall), np.array(mos)


def load_dataset(path) -> Dataset:
    """Parse and validate a dataset directory (or explicit manifest path).

    Fails on the first violation, naming the session and row.
    """
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    base = manifest_path.parent
    with open(manifest_path, encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"manifest is not valid JSON: {exc}") from exc
    try:
        name = manifest["name"]
        scale_min = float(manifest["scaleMin"])
        scale_max = float(manifest["scaleMax"])
        entries = manifest["sessions"]
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"manifest is missing field {exc}") from exc

    sessions = []
    for entry in entries:
        meta_path = base / entry["meta"]
        csv_path = base / entry["csv"]
        if not meta_path.exists():
            raise FileNotFoundError(f"session metadata not found: {meta_path}")
        if not csv_path.exists():
            raise FileNotFoundError(f"session CSV not found: {csv_path}")
        with open(meta_path, encoding="utf-8") as fh:
            try:
                meta = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"metadata {meta_path} is not valid JSON: {exc}") from exc
        try:
            session_id = meta["sessionId"]
            stsq, stall, mos = _read_session_csv(csv_path, session_id)
            trace = SessionTrace(
                session_id=session_id,
                content_id=meta["contentId"],
                pattern_id=meta["patternId"],
                stsq=stsq, stall=stall, mos=mos,
                scale_min=float(meta["scaleMin"]),
                scale_max=float(meta["scaleMax"]),
                vqa_name=meta.get("vqaName", ""),
                vqa_inverted=bool(meta.get("vqaInverted", False)),
            )
        except KeyError as exc:
            raise DataFormatError(f"metadata {meta_path} is missing field {exc}") from exc
        sessions.append(trace)
    return Dataset(name=name, scale_min=scale_min, scale_max=scale_max,
                   sessions=tuple(sessions))


def write_dataset(ds: Dataset, out_dir) -> Path:
    """Write a dataset directory; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, tr in enumerate(ds.sessions):
        stem = f"s{i:03d}"
        csv_name, meta_name = f"{stem}.csv", f"{stem}.json"
        with open(out_dir / csv_name, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_HEADER)
            for t in range(tr.duration):
                writer.writerow([t, _fmt(tr.stsq[t]), int(tr.stall[t]), _fmt(tr.mos[t])])
        meta = {
            "sessionId": tr.session_id,
            "contentId": tr.content_id,
            "patternId": tr.pattern_id,
            "scaleMin": ds.scale_min,
            "scaleMax": ds.scale_max,
            "vqaName": tr.vqa_name,
            "vqaInverted": tr.vqa_inverted,
        }
        with open(out_dir / meta_name, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
        entries.append({"csv": csv_name, "meta": meta_name})
    manifest = {"name": ds.name, "scaleMin": ds.scale_min, "scaleMax": ds.scale_max,
                "sessions": entries}
    manifest_path = out_dir / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest_path


def read_trace_csv(path):
    """Read a standalone playout trace CSV.  The mos column is optional;
    returns (stsq, stall, mos_or_None)."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty CSV", row=1) from None
        if header == _CSV_HEADER:
            has_mos = True
        elif header == _CSV_HEADER[:3]:
            has_mos = False
        else:
            raise DataFormatError(
                f"trace header must be 't,stsq,stall[,mos]', got {','.join(header)!r}", row=1)
        stsq, stall, mos = [], [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} columns, got {len(row)}",
                                      row=row_no)
            t = _parse_number(row[0], "t", None, row_no)
            if t != len(stsq):
                raise DataFormatError("t must start at 0 with unit stride", row=row_no)
            flag = _parse_number(row[2], "stall", None, row_no)
            if flag not in (0.0, 1.0):
                raise DataFormatError(f"stall must be 0 or 1, got {row[2]}", row=row_no)
            stsq.append(_parse_number(row[1], "stsq", None, row_no))
            stall.append(int(flag))
            if has_mos:
                mos.append(_parse_number(row[3], "mos", None, row_no))
    if not stsq:
        raise DataFormatError("trace has no data rows", row=1)
    return (np.array(stsq), np.array(stall),
            np.array(mos) if has_mos else None)


# ---------------------------------------------------------------------------
# Leave-one-out protocol

def _excluded(test: SessionTrace, other: SessionTrace) -> bool:
    # Both databases' protocols exclude content and pattern sharers; the
    # lfovia wording only demands pattern exclusion but the union rule
    # cannot leak test information, so it is applied in both modes.
    return (other.content_id == test.content_id
            or other.pattern_id == test.pattern_id)


def make_loocv_splits(ds: Dataset, mode: str = "netflix") -> list[SplitPlan]:
    """One split per session, ordered by session id: the session under test
    is held out, and any session sharing its content or playout pattern is
    excluded from training.  A session with no eligible training partners
    is a protocol error."""
    if mode not in LOOCV_MODES:
        raise ValidationError(f"mode must be one of {LOOCV_MODES}, got {mode!r}")
    if len(ds.sessions) < 2:
        raise ProtocolError("leave-one-out needs at least 2 sessions")
    plans = []
    for test in sorted(ds.sessions, key=lambda s: s.session_id):
        train_ids = tuple(
            s.session_id
            for s in ds.sessions
            if s.session_id != test.session_id and not _excluded(test, s)
        )
        if not train_ids:
            raise ProtocolError(
                f"session {test.session_id!r} has no eligible training sessions "
                f"(every other session shares its content or playout pattern)")
        plans.append(SplitPlan(test_session_id=test.session_id,
                               train_session_ids=train_ids))
    return plans


def split_satisfies_exclusion(ds: Dataset, plan: SplitPlan) -> bool:
    """Independent validator: re-checks the exclusion predicate by set
    intersection instead of the constructive filter."""
    test = ds.session(plan.test_session_id)
    train = ds.subset(plan.train_session_ids)
    contents = {s.content_id for s in train}
    patterns = {s.pattern_id for s in train}
    ids = {s.session_id for s in train}
    return (test.session_id not in ids
            and test.content_id not in contents
            and test.pattern_id not in patterns)


# ---------------------------------------------------------------------------
# Synthetic oracle generator

@dataclass(frozen=True)
class GeneratorSpec:
    """Settings for the synthetic-session generator.

    The score scale is derived from the noiseless simulated outputs (15%
    headroom on each side), so noiseless MOS is never clipped;
    `noise_rel` expresses the observation noise sigma as a fraction of
    that derived scale range.
    """

    sessions: int = 12
    duration: int = 180
    stall_prob: float = 0.04
    stall_dur_min: int = 1
    stall_dur_max: int = 4
    walk_step: float = 0.05
    contents: int | None = None
    patterns: int | None = None
    model: dict | str = "random"
    model_order: int = 3
    noise_rel: float = 0.0
    vqa_name: str = "synthvqa"
    vqa_inverted: bool = False
    name: str = "synthetic"

    def __post_init__(self):
        if self.sessions < 1 or self.duration < 1:
            raise ValidationError("generator needs sessions >= 1 and duration >= 1")
        if not 0.0 <= self.stall_prob <= 1.0:
            raise ValidationError("stallProb must lie in [0, 1]")
        if not 1 <= self.stall_dur_min <= self.stall_dur_max:
            raise ValidationError("need 1 <= stallDurMin <= stallDurMax")
        if self.walk_step < 0 or self.noise_rel < 0:
            raise ValidationError("walkStep and noiseRel must be >= 0")
        if self.model_order < 1:
            raise ValidationError("modelOrder must be >= 1")
        for name, count in (("contents", self.contents), ("patterns", self.patterns)):
            if count is not None and count < 1:
                raise ValidationError(f"{name} must be >= 1 when given")
        if isinstance(self.model, str) and self.model != "random":
            raise ValidationError("model must be 'random' or an inline model document")

    def as_doc(self) -> dict:
        return {
            "sessions": self.sessions, "duration": self.duration,
            "stallProb": self.stall_prob, "stallDurMin": self.stall_dur_min,
            "stallDurMax": self.stall_dur_max, "walkStep": self.walk_step,
            "contents": self.contents, "patterns": self.patterns,
            "model": self.model, "modelOrder": self.model_order,
            "noiseRel": self.noise_rel, "vqaName": self.vqa_name,
            "vqaInverted": self.vqa_inverted, "name": self.name,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "GeneratorSpec":
        known = {"sessions": "sessions", "duration": "duration",
                 "stallProb": "stall_prob", "stallDurMin": "stall_dur_min",
                 "stallDurMax": "stall_dur_max", "walkStep": "walk_step",
                 "contents": "contents", "patterns": "patterns", "model": "model",
                 "modelOrder": "model_order", "noiseRel": "noise_rel",
                 "vqaName": "vqa_name", "vqaInverted": "vqa_inverted", "name": "name"}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValidationError(f"unknown generator fields: {sorted(unknown)}")
        return cls(**{py: doc[wire] for wire, py in known.items() if wire in doc})


def _gen_stalls(rng, spec: GeneratorSpec) -> np.ndarray:
    stall = np.zeros(spec.duration, dtype=int)
    t = 0
    while t < spec.duration:
        if rng.random() < spec.stall_prob:
            d = int(rng.integers(spec.stall_dur_min, spec.stall_dur_max + 1))
            stall[t:t + d] = 1
            t += d
        else:
            t += 1
    return stall


def _gen_quality_walk(rng, spec: GeneratorSpec, stall) -> np.ndarray:
    """Reflected random walk in [0, 1]; the value freezes while stalled
    (the rendered frame does not change during rebuffering)."""
    w = float(rng.uniform(0.2, 0.8))
    out = np.empty(spec.duration)
    for t in range(spec.duration):
        if not stall[t] and t > 0:
            w += float(rng.normal(0.0, spec.walk_step))
            w = abs(w)
            while w > 1.0:
                w = abs(2.0 - w)
        out[t] = w
    return out


def _random_truth_model(rng, spec: GeneratorSpec) -> QoeModel:
    mc = ModelConfig(m=3, r=spec.model_order)
    m, r, s = mc.m, mc.r, mc.s
    A = np.zeros((s, s))
    B = np.zeros((s, m))
    for i in range(m):
        lo = i * r
        idx = np.arange(r - 1)
        A[lo + idx + 1, lo + idx] = 1.0
        A[lo:lo + r, lo:lo + r] += 0.1 * np.eye(r)
        B[lo, i] = 1.0
    A = A + 0.05 * rng.standard_normal((s, s))
    A *= 0.75 / analysis.spectral_radius(A)
    B = B + 0.05 * rng.standard_normal((s, m))
    C = 0.5 * rng.standard_normal(s) / np.sqrt(s)
    D = 0.5 * rng.standard_normal(m)
    b1 = rng.uniform(2.0, 4.0, m)
    beta = np.column_stack([
        b1,
        -b1 * rng.uniform(0.3, 0.7, m),
        rng.uniform(0.5, 1.5, m),
        rng.uniform(0.25, 1.0, m),
        rng.uniform(-0.25, 0.25, m),
    ])
    x0 = 0.3 * rng.standard_normal(s)
    norm = (
        ChannelNorm(0.0, 1.0, inverted=spec.vqa_inverted),  # walk already in [0,1]
        ChannelNorm(0.0, 1.0),
        ChannelNorm(0.0, float(spec.duration)),
    )
    return QoeModel(config=mc, nl=NonlinearityParams(beta),
                    ss=StateSpaceParams(A=A, B=B, C=C, D=D, x0=x0),
                    feature_norm=norm)


def generate_synthetic(spec: GeneratorSpec, seed: int = 0) -> tuple[Dataset, QoeModel]:
    """Build a synthetic dataset plus the model that generated it.

    MOS is the truth model's free-run output, optionally with Gaussian
    observation noise (clipped to the derived scale).  With noise_rel=0
    the stored MOS equals the simulation exactly.  Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    stalls = []
    walks = []
    for _ in range(spec.sessions):
        stall = _gen_stalls(rng, spec)
        stalls.append(stall)
        walks.append(_gen_quality_walk(rng, spec, stall))

    if isinstance(spec.model, str):
        truth = _random_truth_model(rng, spec)
    else:
        truth = model_from_doc(spec.model)

    n_contents = spec.contents or spec.sessions
    n_patterns = spec.patterns or spec.sessions

    feats = []
    outputs = []
    for i in range(spec.sessions):
        trace = SessionTrace(session_id=f"s{i:03d}", stsq=walks[i], stall=stalls[i],
                             mos=np.zeros(spec.duration), scale_min=0.0, scale_max=1.0)
        f = build_features(trace)
        feats.append(f)
        outputs.append(simulate(truth, f, truth.ss.x0))

    all_y = np.concatenate(outputs)
    lo, hi = float(all_y.min()), float(all_y.max())
    span = hi - lo if hi > lo else 1.0
    margin = 0.15 * span
    scale_min, scale_max = lo - margin, hi + margin
    sigma = spec.noise_rel * (scale_max - scale_min)

    sessions = []
    for i in range(spec.sessions):
        mos = outputs[i]
        if sigma > 0:
            mos = np.clip(mos + sigma * rng.standard_normal(spec.duration),
                          scale_min, scale_max)
        sessions.append(SessionTrace(
            session_id=f"s{i:03d}",
            content_id=f"c{i % n_contents}",
            pattern_id=f"p{i % n_patterns}",
            stsq=walks[i], stall=stalls[i], mos=mos,
            scale_min=scale_min, scale_max=scale_max,
            vqa_name=spec.vqa_name, vqa_inverted=spec.vqa_inverted,
        ))
    ds = Dataset(name=spec.name, scale_min=scale_min, scale_max=scale_max,
                 sessions=tuple(sessions))
    return ds, truth


def save_truth_model(model: QoeModel, out_dir) -> Path:
    path = Path(out_dir) / "truth_model.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_doc(model), fh, indent=2)
        fh.write("\n")
    return path
