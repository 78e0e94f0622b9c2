import math

import numpy as np
import pytest

from fgsm_lab import nn, optim
from fgsm_lab.errors import ArgumentError, EmptyDatasetError, ShapeError
from fgsm_lab.data import Dataset

from conftest import tiny_dataset, zero_logit_net


# -- RMSprop ------------------------------------------------------------------


def test_rmsprop_zero_gradient():
    theta = np.array([1.5, -2.0], np.float32)
    state = optim.RmsPropState([np.array([0.4, 0.1], np.float32)])
    optim.rmsprop_step([theta], [np.zeros(2, np.float32)], state)
    np.testing.assert_array_equal(theta, [1.5, -2.0])
    np.testing.assert_allclose(state.v[0], [0.36, 0.09], rtol=1e-6)


def test_rmsprop_scalar_hand_value():
    theta = np.array([1.0], np.float64)
    state = optim.RmsPropState.like([theta])
    optim.rmsprop_step([theta], [np.array([1.0])], state)
    # v = 0.1, step = 0.001 / (sqrt(0.1) + 1e-7)
    assert state.v[0][0] == pytest.approx(0.1)
    assert theta[0] == pytest.approx(1.0 - 0.001 / (math.sqrt(0.1) + 1e-7), abs=1e-12)
    assert 1.0 - theta[0] == pytest.approx(0.0031622767, abs=1e-9)


def test_rmsprop_descends_quadratic():
    theta = np.array([3.0, -1.0, 0.5], np.float32)
    state = optim.RmsPropState.like([theta], learning_rate=0.05)
    prev = float((theta**2).sum())
    for _ in range(10):
        optim.rmsprop_step([theta], [2 * theta], state)
        cur = float((theta**2).sum())
        assert cur < prev
        prev = cur


def test_rmsprop_shape_mismatch():
    with pytest.raises(ShapeError):
        optim.rmsprop_step([np.zeros(2)], [np.zeros(3)], optim.RmsPropState([np.zeros(2)]))
    with pytest.raises(ShapeError):
        optim.rmsprop_step([np.zeros(2)], [], optim.RmsPropState([np.zeros(2)]))


# -- evaluate -------------------------------------------------------------------


def test_evaluate_zero_net_uniform_confidence():
    net = zero_logit_net()
    m = optim.evaluate(net, tiny_dataset())
    assert m.mean_confidence == pytest.approx(float(np.float32(0.2)), abs=1e-9)
    assert m.mean_loss == pytest.approx(math.log(5), abs=1e-5)
    # argmax ties go to class 0, which is 1 in 5 of the labels
    assert m.accuracy == pytest.approx(0.2)


def test_untrained_accuracy_near_chance(synth):
    from fgsm_lab import harness

    net = harness.init_network(nn.small_config(5), (32, 32, 3), seed=3)
    acc = optim.evaluate(net, synth).accuracy
    assert 0.0 <= acc <= 0.6


def test_evaluate_empty_dataset():
    empty = Dataset(np.zeros((0, 8, 8, 1), np.float32), np.zeros(0), [f"c{k}" for k in range(5)])
    with pytest.raises(EmptyDatasetError):
        optim.evaluate(zero_logit_net(), empty)


# -- train ------------------------------------------------------------------------


def _net(seed=0):
    return nn.Network.build(nn.small_config(5), (8, 8, 1), seed)


def test_history_length_and_fields():
    ds = tiny_dataset()
    _, hist = optim.train(_net(), ds, ds, epochs=3, batch_size=6, seed=2)
    assert len(hist) == 3
    assert [r.epoch for r in hist.records] == [1, 2, 3]
    for r in hist.records:
        assert 0 <= r.train_accuracy <= 1 and 0 <= r.val_accuracy <= 1
        assert r.train_loss > 0 and r.val_loss > 0


def test_training_is_deterministic():
    ds = tiny_dataset()
    a, ha = optim.train(_net(), ds, ds, epochs=2, seed=5)
    b, hb = optim.train(_net(), ds, ds, epochs=2, seed=5)
    assert ha.to_csv() == hb.to_csv()
    for x, y in zip(a.param_arrays(), b.param_arrays()):
        assert x.tobytes() == y.tobytes()


def test_training_ignores_presentation_order():
    ds = tiny_dataset()
    rev = ds.subset(np.arange(len(ds))[::-1])
    a, _ = optim.train(_net(), ds, ds, epochs=2, seed=5)
    b, _ = optim.train(_net(), rev, ds, epochs=2, seed=5)
    for x, y in zip(a.param_arrays(), b.param_arrays()):
        assert x.tobytes() == y.tobytes()


def test_shorter_run_is_prefix_of_longer():
    ds = tiny_dataset()
    snaps = {}
    net = _net()
    optim.train(net, ds, ds, epochs=3, seed=4,
                on_epoch=lambda r: snaps.__setitem__(r.epoch, [p.copy() for p in net.param_arrays()]))
    short, _ = optim.train(_net(), ds, ds, epochs=2, seed=4)
    for x, y in zip(snaps[2], short.param_arrays()):
        assert x.tobytes() == y.tobytes()


def test_training_reduces_loss():
    ds = tiny_dataset(n=10)
    _, hist = optim.train(_net(), ds, ds, epochs=30, batch_size=5, seed=0)
    assert hist.records[-1].val_loss < hist.records[0].val_loss


def test_train_rejects_bad_arguments():
    ds = tiny_dataset()
    with pytest.raises(ArgumentError):
        optim.train(_net(), ds, ds, epochs=0)
    with pytest.raises(ArgumentError):
        optim.train(_net(), ds, ds, epochs=1, batch_size=0)
    with pytest.raises(ShapeError):
        optim.train(_net(), tiny_dataset(shape=(9, 9, 1)), ds, epochs=1)
    empty = ds.subset([])
    with pytest.raises(EmptyDatasetError):
        optim.train(_net(), empty, ds, epochs=1)


def test_history_csv_roundtrip():
    h = optim.TrainHistory([optim.EpochRecord(1, 1.5, 0.25, 1.25, 0.2),
                            optim.EpochRecord(2, 0.1 + 0.2, 0.5, 0.7, 0.4)])
    text = h.to_csv()
    assert text.splitlines()[0] == "epoch,train_loss,train_acc,val_loss,val_acc"
    assert optim.TrainHistory.from_csv(text) == h


def test_trained_model_memorises(trained):
    _, hist = trained
    assert hist.records[-1].train_accuracy >= 0.95
    assert hist.records[-1].val_accuracy >= 0.9
