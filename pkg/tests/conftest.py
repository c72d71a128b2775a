"""Shared fixtures: a small head and a trained model on synthetic blobs.

Session scope keeps the trained model to a single fit; tests must not
mutate fixture objects.
"""

import pytest

from affuq import (
    Action,
    BlobSpec,
    HeadConfig,
    RngStream,
    TrainConfig,
    init_params,
    synth_blobs,
    train,
)

SMALL_HEAD = HeadConfig(
    num_object_classes=4,
    obj_feature_dim=6,
    global_feature_dim=6,
    hidden_dim=16,
    fc_hidden_dim=8,
    num_categories=3,
    dropout_rate=0.3,
)

SMALL_SPEC = BlobSpec(num_classes=3, obj_dim=6, glob_dim=6, count=200)


@pytest.fixture(scope="session")
def blob_dataset():
    dataset, _ = synth_blobs(SMALL_SPEC, RngStream(11).derive("data"))
    return dataset


@pytest.fixture(scope="session")
def trained_small(blob_dataset):
    """A dropout-trained 3-class head that fits the blobs fixture."""
    config = TrainConfig(epochs=20, batch_size=16, lr0=0.01,
                         dropout_rate=0.3, seed=11)
    params, log = train(blob_dataset, Action.SIT, SMALL_HEAD, config, RngStream(11))
    assert log[-1]["train_accuracy"] > 0.9
    return params


@pytest.fixture
def tiny_params():
    """Random untrained parameters for the small head."""
    return init_params(SMALL_HEAD, RngStream(3).derive("init"))
