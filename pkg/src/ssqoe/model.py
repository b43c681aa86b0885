"""Hammerstein model core: static input nonlinearity feeding a linear
discrete-time state space with a scalar QoE readout.

    u_i(t) = b3_i / (1 + exp(-(b1_i * a_i(t) + b2_i))) + b4_i * a_i(t) + b5_i
    yhat(t) = C x(t) + D u(t)
    x(t+1)  = A x(t) + B u(t)

`a(t)` is the per-second feature vector after the model's recorded
channel normalization.  Everything here is a pure function of its
arguments; a QoeModel is immutable after construction and safe to share
across concurrent evaluations.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DimensionError, NumericOverflowError, SchemaVersionError, ValidationError

# Sigmoid exponent clamp: keeps exp() finite while preserving saturation.
_EXP_CLAMP = 500.0

MODEL_SCHEMA_VERSION = 1


def _require(cond, message, exc=ValidationError):
    if not cond:
        raise exc(message)


@dataclass(frozen=True)
class ModelConfig:
    """Model dimensions: m input channels, model order r, s = m*r states."""

    m: int = 3
    r: int = 3

    def __post_init__(self):
        _require(self.m >= 1 and self.r >= 1, "m and r must be >= 1")

    @property
    def s(self) -> int:
        return self.m * self.r


@dataclass(frozen=True, eq=False)
class NonlinearityParams:
    """Per-channel coefficients of the sigmoid-plus-linear input map.

    beta has shape (m, 5); columns are (slope, offset, amplitude,
    linear gain, bias).
    """

    beta: np.ndarray

    def __post_init__(self):
        # own a copy: freezing a caller's array in place would be rude
        beta = np.array(self.beta, dtype=float)
        _require(beta.ndim == 2 and beta.shape[1] == 5,
                 f"beta must be (m, 5), got {beta.shape}", DimensionError)
        _require(np.isfinite(beta).all(), "beta entries must be finite")
        beta.setflags(write=False)
        object.__setattr__(self, "beta", beta)

    @property
    def m(self) -> int:
        return self.beta.shape[0]


@dataclass(frozen=True, eq=False)
class StateSpaceParams:
    """Linear block: A (s,s), B (s,m), C (s,), D (m,), initial state x0 (s,)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        B = np.array(self.B, dtype=float)
        C = np.array(self.C, dtype=float).reshape(-1)
        D = np.array(self.D, dtype=float).reshape(-1)
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        _require(A.ndim == 2 and A.shape[0] == A.shape[1],
                 f"A must be square, got {A.shape}", DimensionError)
        s = A.shape[0]
        _require(B.ndim == 2 and B.shape[0] == s,
                 f"B must be (s, m) with s={s}, got {B.shape}", DimensionError)
        _require(C.shape == (s,), f"C must have {s} entries, got {C.shape}", DimensionError)
        _require(D.shape == (B.shape[1],),
                 f"D must have {B.shape[1]} entries, got {D.shape}", DimensionError)
        _require(x0.shape == (s,), f"x0 must have {s} entries, got {x0.shape}", DimensionError)
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D), ("x0", x0)):
            _require(np.isfinite(arr).all(), f"{name} entries must be finite")
            arr.setflags(write=False)
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D), ("x0", x0)):
            object.__setattr__(self, name, arr)

    @property
    def s(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ChannelNorm:
    """Affine map (raw - offset) / scale, optionally flipped to 1 - v."""

    offset: float
    scale: float
    inverted: bool = False

    def __post_init__(self):
        _require(np.isfinite(self.offset) and np.isfinite(self.scale),
                 "normalization constants must be finite")
        _require(self.scale > 0, "normalization scale must be > 0")


@dataclass(frozen=True, eq=False)
class QoeModel:
    """Deployable bundle: dimensions, nonlinearity, linear block, and the
    feature normalization recorded at training time."""

    config: ModelConfig
    nl: NonlinearityParams
    ss: StateSpaceParams
    feature_norm: tuple[ChannelNorm, ...]

    def __post_init__(self):
        m, s = self.config.m, self.config.s
        _require(self.nl.m == m, f"beta has {self.nl.m} rows, config.m={m}", DimensionError)
        _require(self.ss.s == s and self.ss.m == m,
                 f"state space is ({self.ss.s},{self.ss.m}), config wants ({s},{m})",
                 DimensionError)
        object.__setattr__(self, "feature_norm", tuple(self.feature_norm))
        _require(len(self.feature_norm) == m,
                 f"featureNorm needs {m} channels, got {len(self.feature_norm)}",
                 DimensionError)

    @property
    def x0(self) -> np.ndarray:
        return self.ss.x0

    def with_x0(self, x0) -> "QoeModel":
        return replace(self, ss=replace(self.ss, x0=np.asarray(x0, dtype=float)))


# A state vector is a plain (s,) float array.
StateVector = np.ndarray


def _nonlinearity(beta: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Broadcasting kernel: beta (..., m, 5) applied to features a (..., m)."""
    z = beta[..., 0] * a + beta[..., 1]
    z = np.clip(z, -_EXP_CLAMP, _EXP_CLAMP)
    return beta[..., 2] / (1.0 + np.exp(-z)) + beta[..., 3] * a + beta[..., 4]


def apply_nonlinearity(nl: NonlinearityParams, a) -> np.ndarray:
    """Map one raw-scale-free feature vector a (m,) to the state-space input u (m,)."""
    a = np.asarray(a, dtype=float)
    if a.shape != (nl.m,):
        raise DimensionError(f"feature vector must have {nl.m} entries, got {a.shape}")
    return _nonlinearity(nl.beta, a)


def normalize_features(norm: tuple[ChannelNorm, ...], a_raw: np.ndarray) -> np.ndarray:
    """Apply per-channel normalization to raw features a_raw (..., m)."""
    a_raw = np.asarray(a_raw, dtype=float)
    m = len(norm)
    if a_raw.shape[-1] != m:
        raise DimensionError(f"features have {a_raw.shape[-1]} channels, expected {m}")
    offset = np.array([c.offset for c in norm])
    scale = np.array([c.scale for c in norm])
    v = (a_raw - offset) / scale
    flip = np.array([c.inverted for c in norm])
    if flip.any():
        v = np.where(flip, 1.0 - v, v)
    return v


def step(ss: StateSpaceParams, x: StateVector, u) -> tuple[float, StateVector]:
    """One recurrence step.  The output uses the pre-update state:
    yhat = C x + D u is emitted, then x_next = A x + B u."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (ss.s,) or u.shape != (ss.m,):
        raise DimensionError(
            f"step expects x ({ss.s},) and u ({ss.m},), got {x.shape} and {u.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        yhat = float(ss.C @ x + ss.D @ u)
        x_next = ss.A @ x + ss.B @ u
    if not (np.isfinite(yhat) and np.isfinite(x_next).all()):
        raise NumericOverflowError("state-space step produced a non-finite value")
    return yhat, x_next


def _simulate_linear_batch(A, B, C, D, U, x0, lengths=None) -> np.ndarray:
    """Free-run K stacked systems over S input sequences simultaneously.

    A (K,s,s), B (K,s,m), C (K,s), D (K,m), U (K,S,T,m), x0 (K,S,s).
    `lengths` (S,) freezes each sequence's state once it ends; padded
    outputs are left at zero.  Returns Y (K,S,T).  Never raises on
    overflow: non-finite values propagate for the caller to detect.
    """
    K, S, T, _ = U.shape
    Y = np.zeros((K, S, T))
    X = x0.copy()
    A_ = A[:, None]  # (K,1,s,s) broadcast over sessions
    B_ = B[:, None]
    uniform = lengths is None or bool(np.all(lengths == T))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            u_t = U[:, :, t, :]
            Y[:, :, t] = (X * C[:, None, :]).sum(-1) + (u_t * D[:, None, :]).sum(-1)
            X_next = (A_ @ X[..., None])[..., 0] + (B_ @ u_t[..., None])[..., 0]
            if uniform:
                X = X_next
            else:
                live = t + 1 < np.asarray(lengths)
                X = np.where(live[None, :, None], X_next, X)
    return Y


def simulate(model: QoeModel, feats, x0: StateVector | None = None) -> np.ndarray:
    """Free-run the full model over a raw feature series feats (T, m).

    Per second: normalize, apply the nonlinearity, and step the linear
    block.  Returns the QoE estimate sequence yhat (T,).  Deterministic;
    raises NumericOverflowError naming the first bad step.
    """
    values = getattr(feats, "values", feats)
    a_raw = np.atleast_2d(np.asarray(values, dtype=float))
    m, s = model.config.m, model.config.s
    if a_raw.ndim != 2 or a_raw.shape[1] != m:
        raise DimensionError(f"feature series must be (T, {m}), got {a_raw.shape}")
    if a_raw.shape[0] < 1:
        raise ValidationError("feature series must cover at least one second")
    x0 = model.ss.x0 if x0 is None else np.asarray(x0, dtype=float)
    if x0.shape != (s,):
        raise DimensionError(f"x0 must have {s} entries, got {x0.shape}")

    a_norm = normalize_features(model.feature_norm, a_raw)
    U = _nonlinearity(model.nl.beta, a_norm)
    Y = _simulate_linear_batch(model.ss.A[None], model.ss.B[None],
                               model.ss.C[None], model.ss.D[None],
                               U[None, None], x0[None, None])[0, 0]
    bad = ~np.isfinite(Y)
    if bad.any():
        t = int(np.argmax(bad))
        raise NumericOverflowError("simulation produced a non-finite QoE estimate", t=t)
    return Y


# ---------------------------------------------------------------------------
# Persistence: single JSON document, schemaVersion 1.

def model_to_doc(model: QoeModel) -> dict:
    return {
        "schemaVersion": MODEL_SCHEMA_VERSION,
        "config": {"m": model.config.m, "r": model.config.r, "s": model.config.s},
        "beta": model.nl.beta.tolist(),
        "A": model.ss.A.tolist(),
        "B": model.ss.B.tolist(),
        "C": model.ss.C.tolist(),
        "D": model.ss.D.tolist(),
        "x0": model.ss.x0.tolist(),
        "featureNorm": [
            {"offset": c.offset, "scale": c.scale, "inverted": c.inverted}
            for c in model.feature_norm
        ],
    }


def model_from_doc(doc: dict) -> QoeModel:
    if not isinstance(doc, dict):
        raise ValidationError("model document must be a JSON object")
    version = doc.get("schemaVersion")
    if version != MODEL_SCHEMA_VERSION:
        raise SchemaVersionError(
            f"unsupported model schemaVersion {version!r} (expected {MODEL_SCHEMA_VERSION})")
    try:
        cfg_doc = doc["config"]
        config = ModelConfig(m=int(cfg_doc["m"]), r=int(cfg_doc["r"]))
        if "s" in cfg_doc and int(cfg_doc["s"]) != config.s:
            raise ValidationError(
                f"config.s={cfg_doc['s']} but m*r={config.s}")
        nl = NonlinearityParams(np.asarray(doc["beta"], dtype=float))
        ss = StateSpaceParams(
            A=np.asarray(doc["A"], dtype=float),
            B=np.asarray(doc["B"], dtype=float),
            C=np.asarray(doc["C"], dtype=float),
            D=np.asarray(doc["D"], dtype=float),
            x0=np.asarray(doc["x0"], dtype=float),
        )
        norm = tuple(
            ChannelNorm(offset=float(c["offset"]), scale=float(c["scale"]),
                        inverted=bool(c.get("inverted", False)))
            for c in doc["featureNorm"]
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"model document is missing or malformed: {exc}") from exc
    return QoeModel(config=config, nl=nl, ss=ss, feature_norm=norm)


def save_model(model: QoeModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_doc(model), fh, indent=2)
        fh.write("\n")


def load_model(path) -> QoeModel:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model file {path} is not valid JSON: {exc}") from exc
    return model_from_doc(doc)
