import numpy as np
import pytest

from resilscreen.probcore import Marginal
from resilscreen.structmodels import DanielsBar, DanielsConfig, DanielsSystem


def make_double_layer():
    """Five-bar, two-layer brittle bundle under a 600 N hanging load."""
    layers = (
        (
            DanielsBar(1.5, Marginal("normal", 400.0, 0.30)),
            DanielsBar(1.5, Marginal("normal", 400.0, 0.10)),
        ),
        (
            DanielsBar(2.0, Marginal("normal", 400.0, 0.35)),
            DanielsBar(1.0, Marginal("normal", 400.0, 0.20)),
            DanielsBar(1.0, Marginal("normal", 400.0, 0.15)),
        ),
    )
    return DanielsSystem(DanielsConfig(layers, 600.0, "layer_collapse"))


def make_single_layer():
    """Six identical lognormal bars sharing a 1200 load equally."""
    bars = tuple(DanielsBar(1.0, Marginal("lognormal", 400.0, 0.35)) for _ in range(6))
    return DanielsSystem(DanielsConfig((bars,), 1200.0, "any_cascade"))


@pytest.fixture(scope="session")
def double_layer():
    return make_double_layer()


@pytest.fixture(scope="session")
def single_layer():
    return make_single_layer()


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
