"""Shared fixtures: pristine-condition datasets and detectors trained on them.

The trained models are session-scoped because several acceptance checks start
from the same pre-trained network; training takes about a minute each.
"""

import numpy as np
import pytest

import flashlab as fl

GAUSS = fl.NoiseFamily.GAUSSIAN


def bit_error_rate(detected, truth, gray):
    bits = gray.bits()
    return float(np.mean(bits[detected] != bits[truth]))


def _source_bundle(params, q):
    data = fl.make_dataset(
        params, 200_000, fl.OperatingPoint(0.0, 0.0, GAUSS), seed=11
    )
    model, _ = fl.train(data, fl.TrainConfig(epochs=50, seed=5), fl.init_xavier(2))
    decisions = fl.rnn_detect(model, data.voltages, q)
    thresholds = fl.derive_thresholds_dp(
        data.voltages, decisions, fl.DpConfig(m=200), n_states=2**q
    )
    return data, model, thresholds


@pytest.fixture(scope="session")
def mlc_source():
    """(data, model, thresholds) for a 4-level detector trained on fresh cells."""
    return _source_bundle(fl.mlc_params(), 2)


@pytest.fixture(scope="session")
def tlc_source():
    """(data, model, thresholds) for an 8-level detector trained on fresh cells."""
    return _source_bundle(fl.tlc_params(), 3)
