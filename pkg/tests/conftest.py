"""Shared fixtures: small trained networks are expensive enough to reuse."""

import numpy as np
import pytest

from ratekit.bnn import NetworkConfig, TrainConfig, build_network, train
from ratekit.simgen import Dataset


def make_blobs(n=400, seed=0, sep=2.0):
    rng = np.random.default_rng(seed)
    half = n // 2
    x = np.vstack(
        [
            rng.standard_normal((half, 2)) + sep,
            rng.standard_normal((n - half, 2)) - sep,
        ]
    )
    y = np.r_[np.zeros(half, dtype=int), np.ones(n - half, dtype=int)]
    perm = rng.permutation(n)
    return Dataset(X=x[perm], y=y[perm])


@pytest.fixture(scope="session")
def trained_blob_net():
    ds = make_blobs()
    cfg = NetworkConfig(input_dim=2, hidden_sizes=(16,))
    net = build_network(cfg, seed=0)
    trained, _ = train(net, ds, TrainConfig(epochs=10, seed=0))
    return trained, ds
