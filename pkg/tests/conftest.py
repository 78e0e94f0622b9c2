import numpy as np
import pytest

from fgsm_lab import data, harness, nn, optim


@pytest.fixture(scope="session")
def synth():
    return data.synth_dataset(classes=5, per_class=40, dim=32, seed=0)


@pytest.fixture(scope="session")
def synth_split(synth):
    return data.split(synth, 0.8, seed=0)


@pytest.fixture(scope="session")
def trained(synth_split):
    """Small CNN trained to memorise the synthetic set (about 15 s)."""
    train_set, val_set = synth_split
    net = harness.init_network(nn.small_config(5), (32, 32, 3), seed=1)
    net, history = optim.train(net, train_set, val_set, epochs=50, batch_size=8, seed=1)
    return net, history


def zero_logit_net(shape=(8, 8, 1), classes=5, seed=0):
    """A small CNN whose final dense layer is all zeros (uniform output)."""
    net = nn.Network.build(nn.small_config(classes), shape, seed)
    for p in net.params[-2:]:
        for v in p.values():
            v[:] = 0
    return net


def tiny_dataset(n=20, shape=(8, 8, 1), classes=5, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((n, *shape)).astype(np.float32)
    labels = np.arange(n) % classes
    return data.Dataset(images, labels, [f"c{k}" for k in range(classes)])
