"""Shared fixtures: one synthetic day-0 plus a trained interface.

Session-scoped because interface training is the expensive step; tests
must not mutate the fixtures (the trained parameters are frozen).
"""

import numpy as np
import pytest

from bmistab.bench import make_folds
from bmistab.interface import NeuralEmgInterface
from bmistab.signal import preprocess
from bmistab.synth import GeneratorSpec, generate_day0

FIXTURE_SEED = 3
FIXTURE_EPOCHS = 150


@pytest.fixture(scope="session")
def small_spec() -> GeneratorSpec:
    return GeneratorSpec(seed=FIXTURE_SEED, trials_per_target=10)


@pytest.fixture(scope="session")
def day0(small_spec):
    return generate_day0(small_spec)


@pytest.fixture(scope="session")
def day0_data(day0):
    x, y = preprocess(day0.session)
    return x, y, day0.session.trial_markers


@pytest.fixture(scope="session")
def day0_split(day0_data):
    x, y, markers = day0_data
    folds = make_folds(markers, x.bin_width, x.T, k=5, seed=0)
    test = folds[-1]
    train = np.setdiff1d(np.arange(x.T), test)
    return train, test


@pytest.fixture(scope="session")
def trained_interface(day0_data, day0_split) -> NeuralEmgInterface:
    x, y, _ = day0_data
    train, _ = day0_split
    return NeuralEmgInterface(epochs=FIXTURE_EPOCHS, seed=0).fit(
        x.rates[train], y.envelopes[train]
    )


@pytest.fixture(scope="session")
def day0_heldout(day0_data, day0_split):
    x, y, _ = day0_data
    _, test = day0_split
    return x.rates[test], y.envelopes[test]


@pytest.fixture(scope="session")
def frozen_params(trained_interface):
    return trained_interface.params_
