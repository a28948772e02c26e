import numpy as np
import pytest

from seedprop.bundle import AttentionBundle, BundleMeta, GridShape
from seedprop.synth import default_two_object_spec, generate


def random_stochastic(rng: np.random.Generator, n: int) -> np.ndarray:
    m = rng.random((n, n)) + 1e-6
    return m / m.sum(axis=1, keepdims=True)


def make_bundle(
    rng: np.random.Generator,
    grid: GridShape = GridShape(4, 4),
    k: int = 2,
    layers=(0, 1),
    d_h: int = 8,
    model: str = "testmodel",
) -> AttentionBundle:
    n = grid.n_tokens
    a_ci, a_ii, o_ii = {}, {}, {}
    for l in layers:
        ci = rng.random((k, n)) + 1e-6
        a_ci[l] = (ci / ci.sum(axis=1, keepdims=True)).astype(np.float32)
        a_ii[l] = random_stochastic(rng, n).astype(np.float32)
        o_ii[l] = rng.normal(size=(n, d_h)).astype(np.float32)
    return AttentionBundle(
        grid=grid,
        concepts=[f"concept_{i}" for i in range(k)],
        layers=list(layers),
        a_ci=a_ci,
        a_ii=a_ii,
        o_ii=o_ii,
        d_h=d_h,
        meta=BundleMeta(model=model, timestep=500, trajectory="generation", prompt="test"),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def two_object_scene():
    """One canonical confusable scene shared by the slower tests."""
    return generate(default_two_object_spec(rng_seed=11))
