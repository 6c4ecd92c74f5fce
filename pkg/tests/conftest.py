import numpy as np
import pytest

from latentmix.backends import ToyBackend
from latentmix.config import ExperimentConfig


def small_backend(leak=0.2, seed=3):
    """L=6, d=8 backend: bands 0 / 1-2 / 3-5, 96-dim faces."""
    return ToyBackend(n_layers=6, dim=8, identity_dim=8, attribute_dim=8, leak=leak, seed=seed)


@pytest.fixture(scope="session")
def backend():
    return small_backend()


@pytest.fixture(scope="session")
def leakfree_backend():
    return small_backend(leak=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = dict(
    layers=6,
    latent_dim=8,
    identity_dim=8,
    attribute_dim=8,
    bands="0-0,1-2,3-5",
    subjects=6,
    images_per_subject=2,
    steps=5,
    augmentations=2,
    robustness_keys=3,
    fmr=(0.1, 0.01),
)


@pytest.fixture
def tiny_config(tmp_path):
    return ExperimentConfig(out_dir=str(tmp_path / "run"), **TINY)


def random_latents(backend, rng, shape=()):
    """Latents scaled so that generated faces stay well inside (-1, 1)."""
    return 0.5 * rng.standard_normal(tuple(shape) + (backend.latent_size,))


@pytest.fixture(scope="session")
def bench():
    """The default benchmark (seed 42), run once per session."""
    from latentmix.benchmark import run_benchmark

    return run_benchmark(ExperimentConfig())


# criterion number -> (passed, detail), filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
