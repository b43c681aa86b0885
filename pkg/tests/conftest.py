import numpy as np
import pytest

from ssqoe import (ChannelNorm, GeneratorSpec, ModelConfig, NonlinearityParams,
                   QoeModel, StateSpaceParams, TrainConfig, generate_synthetic)


def make_model(A, B, C, D, x0, beta, norm=None, m=None, r=None):
    """Assemble a QoeModel from raw arrays with an identity normalization
    unless one is given."""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    m = m if m is not None else beta.shape[0]
    s = np.atleast_2d(np.asarray(A, dtype=float)).shape[0]
    r = r if r is not None else s // m
    if norm is None:
        norm = tuple(ChannelNorm(0.0, 1.0) for _ in range(m))
    return QoeModel(
        config=ModelConfig(m=m, r=r),
        nl=NonlinearityParams(beta),
        ss=StateSpaceParams(A=A, B=B, C=C, D=D, x0=x0),
        feature_norm=norm,
    )


def linear_beta(m):
    """Pass-through nonlinearity: u = a."""
    return np.array([[0.0, 0.0, 0.0, 1.0, 0.0]] * m)


def random_model(rng, m=2, r=2, rho=0.7):
    """Random stable model with the identity normalization."""
    s = m * r
    A = rng.standard_normal((s, s))
    A *= rho / max(np.abs(np.linalg.eigvals(A)).max(), 1e-12)
    B = rng.standard_normal((s, m))
    C = rng.standard_normal(s)
    D = rng.standard_normal(m)
    beta = np.column_stack([
        rng.uniform(0.5, 2.0, m), rng.uniform(-1, 1, m),
        rng.uniform(0, 1.5, m), rng.uniform(0.2, 1.2, m),
        rng.uniform(-0.3, 0.3, m),
    ])
    x0 = rng.standard_normal(s) * 0.3
    return make_model(A, B, C, D, x0, beta, m=m, r=r)


@pytest.fixture(scope="session")
def tiny_dataset():
    """4 noiseless sessions, 50 s each, all-distinct content/pattern."""
    spec = GeneratorSpec(sessions=4, duration=50, noise_rel=0.0)
    ds, truth = generate_synthetic(spec, seed=42)
    return ds, truth


@pytest.fixture(scope="session")
def fast_config():
    return TrainConfig(restarts=2, max_iters=12, tol_obj=1e-6, seed=0)
