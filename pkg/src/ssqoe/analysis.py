"""Controllability / observability analysis of the trained linear block.

Builds the Kalman matrices [B | AB | ... | A^(s-1)B] and the stacked
[C; CA; ...; CA^(s-1)], and decides full rank via an SVD threshold.
Powers are formed by iterated multiplication; dimensions here are tiny
(s = 9 at paper scale).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .model import StateSpaceParams


@dataclass(frozen=True)
class RankAnalysis:
    controllability_rank: int
    observability_rank: int
    s: int
    controllable: bool
    observable: bool
    rank_tol: float
    singular_values_ctrl: tuple[float, ...]
    singular_values_obs: tuple[float, ...]
    spectral_radius_a: float

    def as_doc(self) -> dict:
        return {
            "controllabilityRank": self.controllability_rank,
            "observabilityRank": self.observability_rank,
            "s": self.s,
            "controllable": self.controllable,
            "observable": self.observable,
            "rankTol": self.rank_tol,
            "singularValuesCtrl": list(self.singular_values_ctrl),
            "singularValuesObs": list(self.singular_values_obs),
            "spectralRadiusA": self.spectral_radius_a,
        }


def ctrb(A, B) -> np.ndarray:
    """Controllability matrix [B | AB | ... | A^(s-1)B], shape (s, s*p)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    s = A.shape[0]
    if A.shape != (s, s) or B.shape[0] != s:
        raise ValidationError(f"incompatible shapes A{A.shape}, B{B.shape}")
    blocks = [B]
    for _ in range(s - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def obsv(A, C) -> np.ndarray:
    """Observability matrix [C; CA; ...; CA^(s-1)], shape (s*q, s)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C[None, :]
    s = A.shape[0]
    if A.shape != (s, s) or C.shape[1] != s:
        raise ValidationError(f"incompatible shapes A{A.shape}, C{C.shape}")
    blocks = [C]
    for _ in range(s - 1):
        blocks.append(blocks[-1] @ A)
    return np.vstack(blocks)


def controllability_matrix(ss: StateSpaceParams) -> np.ndarray:
    return ctrb(ss.A, ss.B)


def observability_matrix(ss: StateSpaceParams) -> np.ndarray:
    return obsv(ss.A, ss.C)


def numeric_rank(M, tol: float = 0.0) -> int:
    """Count of singular values above tol * sigma_max.

    tol = 0 selects the standard default max(dim) * machine epsilon.
    """
    if tol < 0:
        raise ValidationError("rank tolerance must be >= 0")
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    if tol == 0.0:
        tol = max(M.shape) * np.finfo(float).eps
    return int(np.count_nonzero(sv > tol * sv[0]))


def spectral_radius(A) -> float:
    """Largest eigenvalue magnitude of A."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        return 0.0
    return float(np.abs(np.linalg.eigvals(A)).max())


def analyze(ss: StateSpaceParams, tol: float = 0.0) -> RankAnalysis:
    """Rank both Kalman matrices and report the full-rank verdicts."""
    Mc = controllability_matrix(ss)
    Mo = observability_matrix(ss)
    sv_c = np.linalg.svd(Mc, compute_uv=False)
    sv_o = np.linalg.svd(Mo, compute_uv=False)
    rank_c = numeric_rank(Mc, tol)
    rank_o = numeric_rank(Mo, tol)
    s = ss.s
    return RankAnalysis(
        controllability_rank=rank_c,
        observability_rank=rank_o,
        s=s,
        controllable=rank_c == s,
        observable=rank_o == s,
        rank_tol=float(tol),
        singular_values_ctrl=tuple(float(v) for v in sv_c),
        singular_values_obs=tuple(float(v) for v in sv_o),
        spectral_radius_a=spectral_radius(ss.A),
    )
