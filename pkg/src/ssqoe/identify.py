"""Prediction-error training of the Hammerstein QoE model.

The fitted parameter vector stacks, in this fixed order:

    theta = [beta (m*5) | A (s*s) | B (s*m) | C (s) | D (m) | x0 per session (S*s)]

The objective is the free-run (simulation) error

    J(theta) = sum_sessions sum_t (yhat(t) - y(t))^2 / total seconds,

where each training session is simulated from its own fitted initial
state.  Minimization is damped Gauss-Newton (Levenberg-Marquardt) with a
central finite-difference residual Jacobian over the shared parameters
(the x0 blocks are exact: the output is linear in the initial state);
multi-start over `restarts` seeds, each drawing its stream from
seed + restart index.
Restarts are independent (they could run concurrently); the winner is
the minimum objective with ties broken by lowest restart index, so the
outcome is schedule-independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import analysis
from .errors import TrainingError, ValidationError
from .features import build_features, fit_normalization
from .model import (ModelConfig, NonlinearityParams, QoeModel, StateSpaceParams,
                    _nonlinearity, _simulate_linear_batch, normalize_features)

_FD_STEP = 1e-6          # relative central-difference step
_LAMBDA_MIN = 1e-10
_LAMBDA_MAX = 1e16
_STRUCTURED_EPS = 0.01   # diagonal added to the shift blocks at init


@dataclass(frozen=True)
class TrainConfig:
    restarts: int = 8
    max_iters: int = 60
    tol_obj: float = 1e-7
    seed: int = 0
    rank_tol: float = 0.0
    step_init: float = 1e-2
    min_objective: float = 1e-12

    def __post_init__(self):
        if self.restarts < 1 or self.max_iters < 1 or not self.tol_obj > 0:
            raise ValidationError(
                "TrainConfig needs restarts >= 1, maxIters >= 1, tolObj > 0")
        if self.rank_tol < 0 or self.step_init <= 0 or self.min_objective < 0:
            raise ValidationError(
                "TrainConfig needs rankTol >= 0, stepInit > 0, minObjective >= 0")

    def as_doc(self) -> dict:
        return {"restarts": self.restarts, "maxIters": self.max_iters,
                "tolObj": self.tol_obj, "seed": self.seed,
                "rankTol": self.rank_tol, "stepInit": self.step_init,
                "minObjective": self.min_objective}

    @classmethod
    def from_doc(cls, doc: dict) -> "TrainConfig":
        known = {"restarts": "restarts", "maxIters": "max_iters", "tolObj": "tol_obj",
                 "seed": "seed", "rankTol": "rank_tol", "stepInit": "step_init",
                 "minObjective": "min_objective"}
        unknown = set(doc) - set(known)
        if unknown:
            raise ValidationError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**{py: doc[wire] for wire, py in known.items() if wire in doc})


@dataclass(frozen=True)
class TrainReport:
    final_objective: float
    per_restart_objectives: tuple
    chosen_restart: int
    rank_a_ok: bool
    rank_b_ok: bool
    spectral_radius_a: float

    def as_doc(self) -> dict:
        return {
            "finalObjective": self.final_objective,
            "perRestartObjectives": list(self.per_restart_objectives),
            "chosenRestart": self.chosen_restart,
            "rankAOk": self.rank_a_ok,
            "rankBOk": self.rank_b_ok,
            "spectralRadiusA": self.spectral_radius_a,
        }


# ---------------------------------------------------------------------------
# Parameter vector layout

class _ParamSpace:
    def __init__(self, config: ModelConfig, n_sessions: int):
        m, s = config.m, config.s
        self.config = config
        self.n_sessions = n_sessions
        sizes = [m * 5, s * s, s * m, s, m, n_sessions * s]
        self.offsets = np.cumsum([0] + sizes)
        self.size = int(self.offsets[-1])
        # everything before the per-session x0 blocks
        self.n_shared = int(self.offsets[5])

    def pack(self, beta, A, B, C, D, X0) -> np.ndarray:
        return np.concatenate([np.asarray(p, dtype=float).ravel()
                               for p in (beta, A, B, C, D, X0)])

    def unpack_batch(self, Theta: np.ndarray):
        """Theta (K, P) -> stacked (beta, A, B, C, D, X0) views."""
        m, s = self.config.m, self.config.s
        K = Theta.shape[0]
        o = self.offsets
        beta = Theta[:, o[0]:o[1]].reshape(K, m, 5)
        A = Theta[:, o[1]:o[2]].reshape(K, s, s)
        B = Theta[:, o[2]:o[3]].reshape(K, s, m)
        C = Theta[:, o[3]:o[4]]
        D = Theta[:, o[4]:o[5]]
        X0 = Theta[:, o[5]:o[6]].reshape(K, self.n_sessions, s)
        return beta, A, B, C, D, X0

    def unpack(self, theta: np.ndarray):
        beta, A, B, C, D, X0 = self.unpack_batch(np.asarray(theta, dtype=float)[None])
        return beta[0], A[0], B[0], C[0], D[0], X0[0]


def pack_parameters(model: QoeModel, x0_per_session) -> np.ndarray:
    """Flatten a model plus per-session initial states into the optimizer's
    parameter order (beta, A, B, C, D, x0 blocks)."""
    X0 = np.atleast_2d(np.asarray(x0_per_session, dtype=float))
    space = _ParamSpace(model.config, X0.shape[0])
    return space.pack(model.nl.beta, model.ss.A, model.ss.B, model.ss.C, model.ss.D, X0)


def unpack_parameters(theta, config: ModelConfig, feature_norm):
    """Inverse of pack_parameters; returns (model, x0_per_session).

    The model's own x0 is set to zero; the per-session states come back
    separately, mirroring how training treats them.
    """
    theta = np.asarray(theta, dtype=float)
    fixed = config.m * 5 + config.s * config.s + config.s * config.m + config.s + config.m
    rest = theta.size - fixed
    if rest < 0 or rest % config.s:
        raise ValidationError(f"parameter vector of length {theta.size} does not "
                              f"match config (m={config.m}, r={config.r})")
    space = _ParamSpace(config, rest // config.s)
    beta, A, B, C, D, X0 = space.unpack(theta)
    model = QoeModel(
        config=config,
        nl=NonlinearityParams(beta),
        ss=StateSpaceParams(A=A, B=B, C=C, D=D, x0=np.zeros(config.s)),
        feature_norm=feature_norm,
    )
    return model, X0


# ---------------------------------------------------------------------------
# Prediction-error problem over a training set

class _Problem:
    """Padded, normalized training tensors plus batched residual evaluation."""

    def __init__(self, a_norm_list, targets, config: ModelConfig):
        S = len(a_norm_list)
        lengths = np.array([a.shape[0] for a in a_norm_list])
        Tmax = int(lengths.max())
        m = config.m
        self.config = config
        self.space = _ParamSpace(config, S)
        self.lengths = lengths
        self.a_norm = np.zeros((S, Tmax, m))
        self.y = np.zeros((S, Tmax))
        mask = np.zeros((S, Tmax), dtype=bool)
        for j, (a, y) in enumerate(zip(a_norm_list, targets)):
            self.a_norm[j, :len(a)] = a
            self.y[j, :len(y)] = y
            mask[j, :len(a)] = True
        self.flat_idx = np.flatnonzero(mask.ravel())
        self.n_obs = int(lengths.sum())
        self._inv_sqrt_n = 1.0 / np.sqrt(self.n_obs)

    def residuals_batch(self, Theta: np.ndarray, U=None) -> np.ndarray:
        """Theta (K, P) -> scaled residuals (K, N); sum of squares per row
        equals the training objective for that parameter set.  `U` may
        supply precomputed state-space inputs (K, S, T, m)."""
        beta, A, B, C, D, X0 = self.space.unpack_batch(Theta)
        if U is None:
            U = _nonlinearity(beta[:, None, None, :, :], self.a_norm[None])
        Y = _simulate_linear_batch(A, B, C, D, U, X0, self.lengths)
        K = Theta.shape[0]
        E = (Y - self.y[None]).reshape(K, -1)[:, self.flat_idx]
        return E * self._inv_sqrt_n

    def residuals(self, theta) -> np.ndarray:
        return self.residuals_batch(np.asarray(theta, dtype=float)[None])[0]

    def objective(self, theta) -> float:
        r = self.residuals(theta)
        if not np.isfinite(r).all():
            return float("inf")
        with np.errstate(over="ignore"):
            total = float(r @ r)
        return total if np.isfinite(total) else float("inf")

    def jacobian(self, theta) -> np.ndarray:
        """Jacobian of the scaled residuals, (N, P): central finite
        differences over the shared parameters (beta, A, B, C, D), with
        the per-session x0 block exact (the output is linear in x0, with
        sensitivity C A^t).  Only the beta perturbations re-evaluate the
        nonlinearity; the rest reuse the base inputs.  Non-finite entries
        (overflowing perturbations) are zeroed."""
        theta = np.asarray(theta, dtype=float)
        space = self.space
        F = space.n_shared
        m, s = space.config.m, space.config.s
        S = len(self.lengths)
        T = self.a_norm.shape[1]

        h = _FD_STEP * np.maximum(1.0, np.abs(theta[:F]))
        Theta = np.tile(theta, (2 * F, 1))
        idx = np.arange(F)
        Theta[idx, idx] += h
        Theta[F + idx, idx] -= h
        nb = m * 5
        beta_rows = np.concatenate([np.arange(nb), F + np.arange(nb)])
        rest_rows = np.concatenate([np.arange(nb, F), F + np.arange(nb, F)])

        beta0, A0, B0, C0, D0, _ = space.unpack(theta)
        u_base = _nonlinearity(beta0, self.a_norm)  # (S, T, m)
        R = np.empty((2 * F, self.n_obs))
        R[beta_rows] = self.residuals_batch(Theta[beta_rows])
        R[rest_rows] = self.residuals_batch(
            Theta[rest_rows],
            U=np.broadcast_to(u_base[None], (len(rest_rows), S, T, m)))
        J_shared = ((R[:F] - R[F:]) / (2.0 * h)[:, None]).T

        rows = _impulse_response_rows(A0, C0, T)
        J_x0 = np.zeros((self.n_obs, S * s))
        pos = 0
        for j, L in enumerate(self.lengths):
            L = int(L)
            J_x0[pos:pos + L, j * s:(j + 1) * s] = rows[:L]
            pos += L
        J_x0 *= self._inv_sqrt_n

        J = np.hstack([J_shared, J_x0])
        if not np.isfinite(J).all():
            J = np.nan_to_num(J, nan=0.0, posinf=0.0, neginf=0.0)
        return J

    def gradient(self, theta) -> np.ndarray:
        """Objective gradient 2 J^T r, as used by the optimizer."""
        r = self.residuals(theta)
        if not np.isfinite(r).all():
            raise ValidationError("cannot evaluate gradient: non-finite residuals")
        return 2.0 * self.jacobian(theta).T @ r


def _build_problem(traces, config: ModelConfig, feature_norm, features=None):
    traces = list(traces)
    if not traces:
        raise ValidationError("training set is empty")
    if features is None:
        if config.m != 3:
            raise ValidationError(
                "the built-in 3-channel features need m=3; pass `features` for other m")
        mats = [build_features(tr).values for tr in traces]
    else:
        mats = [np.asarray(f, dtype=float) for f in features]
        if len(mats) != len(traces):
            raise ValidationError("features list must align with traces")
        for f in mats:
            if f.ndim != 2 or f.shape[1] != config.m:
                raise ValidationError(
                    f"feature matrices must be (T, {config.m}), got {f.shape}")
    a_norm = [normalize_features(feature_norm, f) for f in mats]
    targets = [np.asarray(tr.mos, dtype=float) for tr in traces]
    return _Problem(a_norm, targets, config), mats


# ---------------------------------------------------------------------------
# Levenberg-Marquardt with strict descent acceptance

def _levenberg_marquardt(problem: _Problem, theta0, cfg: TrainConfig,
                         max_iters, log=None, restart=0):
    """Returns (theta, objective, iterations) or None when the start point
    (or every trial step) is unusable.  Only strictly-decreasing steps are
    accepted, so the logged objective sequence never increases."""
    theta = np.asarray(theta0, dtype=float).copy()
    obj = problem.objective(theta)
    if not np.isfinite(obj):
        return None
    if log is not None:
        log.append((restart, 0, obj))
    lam = cfg.step_init
    it = 0
    for it in range(1, max_iters + 1):
        J = problem.jacobian(theta)
        r = problem.residuals(theta)
        JtJ = J.T @ J
        g = J.T @ r
        damp = np.diag(JtJ).copy()
        damp[damp < 1e-12] = 1e-12
        accepted = False
        new_obj = obj
        for _ in range(30):
            try:
                delta = np.linalg.solve(JtJ + lam * np.diag(damp), -g)
            except np.linalg.LinAlgError:
                lam = min(lam * 8.0, _LAMBDA_MAX)
                continue
            cand = theta + delta
            cand_obj = problem.objective(cand)
            if np.isfinite(cand_obj) and cand_obj < obj:
                theta, new_obj, accepted = cand, cand_obj, True
                break
            if lam >= _LAMBDA_MAX:
                break
            lam = min(lam * 8.0, _LAMBDA_MAX)
        if not accepted:
            break
        if log is not None:
            log.append((restart, it, new_obj))
        improvement = obj - new_obj
        obj = new_obj
        lam = max(lam * 0.25, _LAMBDA_MIN)
        if obj <= cfg.min_objective:
            break
        if improvement <= cfg.tol_obj * obj:
            break
    return theta, obj, it


def initialize_structured(mc: ModelConfig, rng) -> StateSpaceParams:
    """Shift-register style initialization: A holds m blocks of size r,
    each a subdiagonal shift plus a small diagonal so rank(A) = s; channel
    i drives only its block's first state, so rank(B) = m.  C and D start
    small and random; the optimizer moves everything freely afterwards."""
    m, r, s = mc.m, mc.r, mc.s
    A = np.zeros((s, s))
    B = np.zeros((s, m))
    for i in range(m):
        lo = i * r
        idx = np.arange(r - 1)
        A[lo + idx + 1, lo + idx] = 1.0
        A[lo:lo + r, lo:lo + r] += _STRUCTURED_EPS * np.eye(r)
        B[lo, i] = 1.0
    C = 0.1 * rng.standard_normal(s)
    D = 0.1 * rng.standard_normal(m)
    return StateSpaceParams(A=A, B=B, C=C, D=D, x0=np.zeros(s))


def _initial_theta(mc: ModelConfig, n_sessions, rng, space: _ParamSpace) -> np.ndarray:
    ss = initialize_structured(mc, rng)
    m = mc.m
    beta = np.column_stack([
        rng.uniform(0.5, 3.0, m),     # sigmoid slope
        rng.uniform(-1.0, 1.0, m),    # sigmoid offset
        rng.uniform(0.0, 1.5, m),     # sigmoid amplitude
        rng.uniform(0.25, 1.5, m),    # linear gain
        rng.uniform(-0.25, 0.25, m),  # bias
    ])
    X0 = 0.1 * rng.standard_normal((n_sessions, mc.s))
    return space.pack(beta, ss.A, ss.B, ss.C, ss.D, X0)


def _repair_ranks(problem: _Problem, theta, cfg: TrainConfig):
    """Post-hoc rank enforcement: nudge deficient A (or B) diagonals by a
    small epsilon, re-polish a few LM iterations, and re-verify."""
    s, m = problem.config.s, problem.config.m
    obj = problem.objective(theta)
    for _ in range(3):
        beta, A, B, C, D, X0 = problem.space.unpack(theta)
        ok_a = analysis.numeric_rank(A, cfg.rank_tol) == s
        ok_b = analysis.numeric_rank(B, cfg.rank_tol) == m
        if ok_a and ok_b:
            return theta, obj, True, True
        if not ok_a:
            A = A + _STRUCTURED_EPS * max(1.0, float(np.abs(A).max())) * np.eye(s)
        if not ok_b:
            bump = _STRUCTURED_EPS * max(1.0, float(np.abs(B).max()))
            B = B + bump * np.eye(s, m)
        theta = problem.space.pack(beta, A, B, C, D, X0)
        polished = _levenberg_marquardt(problem, theta, cfg, max_iters=5)
        if polished is not None:
            theta, obj, _ = polished
        else:
            obj = problem.objective(theta)
    beta, A, B, C, D, X0 = problem.space.unpack(theta)
    return (theta, obj,
            analysis.numeric_rank(A, cfg.rank_tol) == s,
            analysis.numeric_rank(B, cfg.rank_tol) == m)


def train(traces, cfg: TrainConfig | None = None, mc: ModelConfig | None = None,
          features=None, iteration_log=None) -> tuple[QoeModel, TrainReport]:
    """Fit a QoeModel to training sessions by least-squares prediction-error
    minimization; deterministic given cfg.seed.

    `iteration_log`, when given, collects (restart, iter, objective) rows
    for every accepted optimizer step.  Raises TrainingError if every
    restart diverges.
    """
    cfg = cfg or TrainConfig()
    mc = mc or ModelConfig()
    traces = list(traces)
    if not traces:
        raise ValidationError("training set is empty")
    norm = fit_normalization(traces, features=features)
    problem, mats = _build_problem(traces, mc, norm, features=features)
    S = len(traces)

    best = None
    per_restart = []
    for k in range(cfg.restarts):
        rng = np.random.default_rng(cfg.seed + k)
        theta0 = _initial_theta(mc, S, rng, problem.space)
        result = _levenberg_marquardt(problem, theta0, cfg, cfg.max_iters,
                                      log=iteration_log, restart=k)
        if result is None:
            per_restart.append(None)
            continue
        theta_k, obj_k, _ = result
        per_restart.append(obj_k)
        if best is None or obj_k < best[0]:
            best = (obj_k, k, theta_k)
    if best is None:
        raise TrainingError(f"all {cfg.restarts} restarts diverged")

    obj_best, chosen, theta_best = best
    theta_best, obj_best, rank_a_ok, rank_b_ok = _repair_ranks(problem, theta_best, cfg)
    # Keep the report invariant (final = min over restarts) if repair moved J.
    per_restart[chosen] = obj_best

    beta, A, B, C, D, X0 = problem.space.unpack(theta_best)
    model = QoeModel(
        config=mc,
        nl=NonlinearityParams(beta),
        ss=StateSpaceParams(A=A, B=B, C=C, D=D, x0=np.zeros(mc.s)),
        feature_norm=norm,
    )
    x0_star = select_initial_state(model, traces, fitted_x0=X0, features=mats)
    model = model.with_x0(x0_star)
    report = TrainReport(
        final_objective=obj_best,
        per_restart_objectives=tuple(per_restart),
        chosen_restart=chosen,
        rank_a_ok=rank_a_ok,
        rank_b_ok=rank_b_ok,
        spectral_radius_a=analysis.spectral_radius(A),
    )
    return model, report


# ---------------------------------------------------------------------------
# State initialization for deployment

def _normalized_feature_mats(model: QoeModel, traces, features=None):
    if features is None:
        mats = [build_features(tr).values for tr in traces]
    else:
        mats = [np.asarray(f, dtype=float) for f in features]
    return [normalize_features(model.feature_norm, f) for f in mats]


def _session_inputs(model: QoeModel, a_norm):
    return _nonlinearity(model.nl.beta, a_norm)


def _impulse_response_rows(A, C, T) -> np.ndarray:
    """Stacked output sensitivities to the initial state: row t is C A^t."""
    rows = np.empty((T, A.shape[0]))
    row = np.array(C, dtype=float)
    for t in range(T):
        rows[t] = row
        row = row @ A
    return rows


def _fit_x0_least_squares(model: QoeModel, U, y) -> np.ndarray:
    """For fixed dynamics the output is linear in x0: yhat(t) = C A^t x0 +
    forced(t), so the per-session best initial state is a small lstsq."""
    ss = model.ss
    forced = _simulate_linear_batch(ss.A[None], ss.B[None], ss.C[None], ss.D[None],
                                    U[None, None], np.zeros((1, 1, ss.s)))[0, 0]
    rows = _impulse_response_rows(ss.A, ss.C, U.shape[0])
    sol, *_ = np.linalg.lstsq(rows, y - forced, rcond=None)
    return sol


def _final_state(model: QoeModel, U, x0) -> np.ndarray:
    x = np.asarray(x0, dtype=float).copy()
    for t in range(U.shape[0]):
        x = model.ss.A @ x + model.ss.B @ U[t]
    return x


def select_initial_state(model: QoeModel, traces, fitted_x0=None,
                         features=None) -> np.ndarray:
    """Pick the single deployable x(0) from training data.

    Candidates: the zero vector, each session's fitted x(0) (supplied by
    training, or refit here in closed form), and each session's free-run
    final state.  The winner minimizes the mean per-session training RMSE
    when used as the common initial state for every session; ties go to
    the earliest candidate in that enumeration order.
    """
    traces = list(traces)
    if not traces:
        raise ValidationError("need at least one training session")
    a_norm = _normalized_feature_mats(model, traces, features)
    inputs = [_session_inputs(model, a) for a in a_norm]
    targets = [np.asarray(tr.mos, dtype=float) for tr in traces]
    s = model.config.s
    S = len(traces)

    if fitted_x0 is None:
        fitted = [_fit_x0_least_squares(model, U, y) for U, y in zip(inputs, targets)]
    else:
        fitted = [np.asarray(x, dtype=float) for x in np.atleast_2d(fitted_x0)]
        if len(fitted) != S:
            raise ValidationError("fitted_x0 must supply one state per session")
    finals = [_final_state(model, U, x) for U, x in zip(inputs, fitted)]
    candidates = np.vstack([np.zeros(s)] + fitted + finals)  # (2S+1, s)

    lengths = np.array([len(y) for y in targets])
    Tmax = int(lengths.max())
    U_pad = np.zeros((S, Tmax, model.config.m))
    y_pad = np.zeros((S, Tmax))
    for j, (U, y) in enumerate(zip(inputs, targets)):
        U_pad[j, :len(U)] = U
        y_pad[j, :len(y)] = y
    K = candidates.shape[0]
    ss = model.ss
    tile = lambda M: np.repeat(M[None], K, axis=0)
    X0 = np.repeat(candidates[:, None, :], S, axis=1)  # every session shares the candidate
    Y = _simulate_linear_batch(tile(ss.A), tile(ss.B), tile(ss.C), tile(ss.D),
                               np.repeat(U_pad[None], K, axis=0), X0, lengths)
    mask = np.arange(Tmax)[None, :] < lengths[:, None]
    err2 = np.where(mask[None], (Y - y_pad[None]) ** 2, 0.0)
    per_session_rmse = np.sqrt(err2.sum(axis=2) / lengths[None, :])
    score = per_session_rmse.mean(axis=1)
    score = np.where(np.isfinite(score), score, np.inf)
    return candidates[int(np.argmin(score))]


# ---------------------------------------------------------------------------
# Public objective / gradient (for audits and tests)

def objective(model: QoeModel, traces, x0_per_session=None, features=None) -> float:
    """The training criterion J evaluated for this model on these sessions,
    using the model's recorded feature normalization.  Without explicit
    per-session states every session starts from model.x0.  Non-finite
    simulations yield +inf."""
    traces = list(traces)
    problem, _ = _build_problem(traces, model.config, model.feature_norm,
                                features=features)
    X0 = _default_x0(model, len(traces), x0_per_session)
    theta = pack_parameters(model, X0)
    return problem.objective(theta)


def objective_gradient(model: QoeModel, traces, x0_per_session=None,
                       features=None) -> np.ndarray:
    """Gradient of `objective` in the packed parameter order, computed the
    way the optimizer computes it: 2 J^T r with a central finite-difference
    residual Jacobian."""
    traces = list(traces)
    problem, _ = _build_problem(traces, model.config, model.feature_norm,
                                features=features)
    X0 = _default_x0(model, len(traces), x0_per_session)
    theta = pack_parameters(model, X0)
    return problem.gradient(theta)


def _default_x0(model: QoeModel, n_sessions, x0_per_session):
    if x0_per_session is None:
        return np.repeat(model.ss.x0[None], n_sessions, axis=0)
    X0 = np.atleast_2d(np.asarray(x0_per_session, dtype=float))
    if X0.shape != (n_sessions, model.config.s):
        raise ValidationError(
            f"x0_per_session must be ({n_sessions}, {model.config.s}), got {X0.shape}")
    return X0
