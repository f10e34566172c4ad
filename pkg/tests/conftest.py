import numpy as np
import pytest

from infovaegan.distributions import PriorConfig
from infovaegan.model import ModelBundle, build_bundle
from infovaegan.nn import DenseLayer, Mlp


def small_bundle(pixels=16, hidden=(8,), seed=0, **prior) -> ModelBundle:
    cfg = PriorConfig(**{"z_dim": 2, "c_dim": 2, "K": 3, **prior})
    return build_bundle(cfg, pixels, np.random.default_rng(seed), hidden)


def with_critic(bundle: ModelBundle, critic: Mlp) -> ModelBundle:
    return ModelBundle(bundle.generator, critic, bundle.encoder_u, bundle.encoder_z, bundle.prior)


def linear_critic(weights) -> Mlp:
    w = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
    return Mlp([DenseLayer(w, np.zeros(1))])


@pytest.fixture
def bundle():
    return small_bundle()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
