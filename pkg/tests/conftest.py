import numpy as np
import pytest

from danyra import (
    BufferSchedule,
    HyperParams,
    generate_instance,
    solve_active_set,
    spectral_constants,
)
from danyra.cli import BENCHMARK_SEED


@pytest.fixture(scope="session")
def benchmark_instance():
    return generate_instance(BENCHMARK_SEED, 14, 70.0, 16)


@pytest.fixture(scope="session")
def benchmark_oracle(benchmark_instance):
    return solve_active_set(benchmark_instance)


@pytest.fixture(scope="session")
def benchmark_constants(benchmark_instance):
    return spectral_constants(benchmark_instance)


@pytest.fixture
def base_hp():
    def make(omega=0.0, **kw):
        params = dict(alpha=0.01, beta=0.02, eta=0.1, gamma=0.2)
        params.update(kw)
        return HyperParams(**params, buffer=BufferSchedule.constant(omega))

    return make


@pytest.fixture
def small_instance():
    return generate_instance(77, 5, 10.0, 2)


def randomize_state(state, seed=0, delta_low=0.1):
    """Push a state away from its init deterministically (for exercise tests)."""
    rng = np.random.default_rng(seed)
    state.x += rng.normal(size=state.x.shape)
    state.x_prime += rng.normal(size=state.x_prime.shape)
    state.y += rng.normal(size=state.y.shape)
    state.lam += rng.normal(size=state.lam.shape)
    if state.delta is not None:
        state.delta += rng.uniform(delta_low, 1.0, size=state.delta.shape)
    return state
