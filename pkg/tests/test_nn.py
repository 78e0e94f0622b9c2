import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fgsm_lab import gradcheck, nn
from fgsm_lab.errors import (
    ArgumentError,
    BadMagicError,
    FormatError,
    ShapeError,
    StateError,
    TruncatedError,
    VersionMismatchError,
)
from fgsm_lab.rng import Rng

VGG16_SHAPES = [
    (224, 224, 3),
    *[(224, 224, 64)] * 2,
    (112, 112, 64),
    *[(112, 112, 128)] * 2,
    (56, 56, 128),
    *[(56, 56, 256)] * 3,
    (28, 28, 256),
    *[(28, 28, 512)] * 3,
    *[(14, 14, 512)] * 4,
    (7, 7, 512),
]


def dense_softmax_net(w, b):
    w = np.asarray(w, np.float32)
    return nn.Network([nn.Dense(w.shape[1]), nn.Softmax()], (w.shape[0],),
                      [{"kernel": w, "bias": np.asarray(b, np.float32)}, {}])


# -- shapes -----------------------------------------------------------------


def test_vgg16_shapes_match_table():
    layers, shape = nn.load_config("vgg16")
    assert nn.infer_shapes(layers, shape) == VGG16_SHAPES


def test_vgg16_head_shapes():
    shapes = nn.infer_shapes(nn.vgg16_head(5), (7, 7, 512))
    assert shapes == [(7, 7, 512), (25088,), (4096,), (4096,), (4096,), (4096,), (5,)]


def test_empty_layers_identity():
    assert nn.infer_shapes([], (4, 4, 1)) == [(4, 4, 1)]


def test_small_config_shapes():
    shapes = nn.infer_shapes(nn.small_config(5), (32, 32, 3))
    assert shapes[-1] == (5,)
    assert (8, 8, 16) in shapes


def test_shape_error_names_layer():
    with pytest.raises(ShapeError, match="layer 1"):
        nn.infer_shapes([nn.Conv2D(4), nn.Dense(3)], (8, 8, 1))
    with pytest.raises(ShapeError, match="layer 2"):
        nn.infer_shapes([nn.MaxPool(2, 2), nn.MaxPool(2, 2), nn.MaxPool(2, 2)], (4, 4, 1))


def test_bad_dropout_rate():
    with pytest.raises(ShapeError):
        nn.infer_shapes([nn.Flatten(), nn.Dropout(1.0)], (2, 2, 1))


def test_network_must_end_with_softmax():
    with pytest.raises(ShapeError):
        nn.Network.build([nn.Flatten(), nn.Dense(3)], (2, 2, 1))


# -- softmax / cross-entropy --------------------------------------------------


def test_softmax_zeros_uniform():
    np.testing.assert_allclose(nn.softmax(np.zeros(5, np.float32)), [0.2] * 5, atol=1e-7)


def test_softmax_hand_values():
    ref = [math.exp(v) / sum(math.exp(u) for u in (1, 2, 3)) for v in (1, 2, 3)]
    np.testing.assert_allclose(nn.softmax(np.array([1.0, 2.0, 3.0])), ref, atol=1e-12)
    np.testing.assert_allclose(ref, [0.0900, 0.2447, 0.6652], atol=1e-4)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    z = np.array(z)
    np.testing.assert_allclose(nn.softmax(z + c), nn.softmax(z), atol=1e-6)
    assert abs(nn.softmax(z).sum() - 1) < 1e-6


def test_cross_entropy_values():
    assert nn.cross_entropy(np.full(5, 0.2), 3) == pytest.approx(math.log(5), abs=1e-5)
    assert nn.cross_entropy(np.array([0.0, 1.0, 0.0]), 1) <= 1e-6
    assert nn.cross_entropy(np.array([0.1, 0.7, 0.2]), 1) == pytest.approx(-math.log(0.7), abs=1e-9)
    assert nn.cross_entropy(np.array([0.0, 1.0]), 0) == pytest.approx(-math.log(1e-7))


def test_cross_entropy_label_range():
    with pytest.raises(ArgumentError):
        nn.cross_entropy(np.full(5, 0.2), 5)


# -- forward ----------------------------------------------------------------


def test_zero_final_layer_gives_uniform():
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), 4)
    net.params[10]["kernel"][:] = 0
    probs, _ = nn.forward(net, Rng(1).random(64).reshape(8, 8, 1).astype(np.float32))
    np.testing.assert_allclose(probs, [0.2] * 5, atol=1e-7)


def test_eval_forward_is_deterministic():
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), 4)
    x = Rng(2).random(64).reshape(8, 8, 1).astype(np.float32)
    a, _ = nn.forward(net, x, "eval")
    b, _ = nn.forward(net, x, "eval")
    assert a.tobytes() == b.tobytes()


def test_dense_softmax_hand_computed():
    w = [[1.0, -1.0, 0.5], [0.0, 2.0, -1.0]]
    b = [0.1, 0.0, -0.2]
    x = np.array([0.5, 0.25], np.float32)
    logits = [0.5 * 1 + 0.1, 0.5 * -1 + 0.25 * 2, 0.5 * 0.5 - 0.25 - 0.2]
    ref = [math.exp(v) / sum(math.exp(u) for u in logits) for v in logits]
    probs, _ = nn.forward(dense_softmax_net(w, b), x)
    np.testing.assert_allclose(probs, ref, rtol=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_forward_probs_are_distribution(seed):
    r = Rng(seed)
    net = nn.Network.build(nn.small_config(4), (8, 8, 2), r)
    x = r.random(128).reshape(8, 8, 2).astype(np.float32)
    for mode in ("eval", "train"):
        probs, _ = nn.forward(net, x, mode, Rng(seed + 1))
        assert np.all(probs >= 0)
        assert abs(float(probs.sum()) - 1) < 1e-5


def test_forward_shape_error():
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), 0)
    with pytest.raises(ShapeError):
        nn.forward(net, np.zeros((8, 8, 3), np.float32))


def test_dropout_inverted_scaling_preserves_mean():
    net = nn.Network([nn.Dropout(0.5), nn.Dense(1), nn.Softmax()], (10_000,),
                     [{}, {"kernel": np.zeros((10_000, 1), np.float32), "bias": np.zeros(1, np.float32)}, {}])
    x = Rng(5).random(10_000).astype(np.float32)
    _, trace = nn.forward(net, x, "train", Rng(9))
    masked = trace.inputs[1][0]
    assert abs(masked.mean() - x.mean()) / x.mean() < 0.05
    kept = masked != 0
    np.testing.assert_allclose(masked[kept], 2 * x[kept], rtol=1e-6)
    _, trace = nn.forward(net, x, "eval")
    np.testing.assert_array_equal(trace.inputs[1][0], x)


# -- backward ---------------------------------------------------------------


def test_logit_gradient_is_probs_minus_onehot():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(4, 3)).astype(np.float32)
    net = dense_softmax_net(w, np.zeros(3))
    x = rng.random(4).astype(np.float32)
    probs, trace = nn.forward(net, x)
    g = nn.backward(net, trace, 2)
    expect = probs.copy()
    expect[2] -= 1
    np.testing.assert_allclose(g.param_grads[0]["bias"], expect, atol=1e-7)
    np.testing.assert_allclose(g.input_grad, w @ expect, atol=1e-6)


def test_dead_relu_unit_gets_zero_gradient():
    k_in = np.array([[1.0, -1.0]], np.float32)  # unit 1 is negative for any positive input
    net = nn.Network(
        [nn.Dense(2), nn.ReLU(), nn.Dense(3), nn.Softmax()], (1,),
        [{"kernel": k_in, "bias": np.zeros(2, np.float32)}, {},
         {"kernel": np.arange(6, dtype=np.float32).reshape(2, 3) / 6, "bias": np.zeros(3, np.float32)}, {}],
    )
    _, trace = nn.forward(net, np.array([0.7], np.float32))
    g = nn.backward(net, trace, 0)
    assert g.param_grads[0]["kernel"][0, 1] == 0
    assert g.param_grads[0]["bias"][1] == 0
    np.testing.assert_array_equal(g.param_grads[2]["kernel"][1], 0)
    assert g.param_grads[0]["kernel"][0, 0] != 0


def test_relu_subgradient_at_zero_is_zero():
    net = nn.Network(
        [nn.ReLU(), nn.Dense(2), nn.Softmax()], (2,),
        [{}, {"kernel": np.array([[1, -1], [2, 1]], np.float32), "bias": np.zeros(2, np.float32)}, {}],
    )
    _, trace = nn.forward(net, np.array([0.0, 0.5], np.float32))
    g = nn.backward(net, trace, 0)
    assert g.input_grad[0] == 0
    assert g.input_grad[1] != 0


def test_stale_and_reused_trace():
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), 0)
    x = np.full((8, 8, 1), 0.5, np.float32)
    _, trace = nn.forward(net, x)
    nn.backward(net, trace, 0)
    with pytest.raises(StateError):
        nn.backward(net, trace, 0)
    _, trace = nn.forward(net, x)
    net.touch()
    with pytest.raises(StateError):
        nn.backward(net, trace, 0)
    other = net.copy()
    _, trace = nn.forward(net, x)
    with pytest.raises(StateError):
        nn.backward(other, trace, 0)


def test_backward_reuses_dropout_masks():
    """Finite differences with the same dropout mask agree with backward in train mode."""
    r = Rng(21)
    net = nn.Network.build(nn.small_config(3), (8, 8, 1), r)
    x = r.random(64).reshape(8, 8, 1)
    for p in net.params:
        for k in p:
            p[k] = p[k].astype(np.float64)
    _, trace = nn.forward_batch(net, x[None], "train", Rng(77))
    g = nn.backward_batch(net, trace, [1], "sum").input_grad[0]

    def loss(xx):
        probs, _ = nn.forward_batch(net, xx[None], "train", Rng(77))
        return -math.log(probs[0, 1])

    h = 1e-6
    flat = x.reshape(-1)
    for j in range(0, 64, 5):
        o = flat[j]
        flat[j] = o + h
        lp = loss(x)
        flat[j] = o - h
        lm = loss(x)
        flat[j] = o
        assert abs((lp - lm) / (2 * h) - g.reshape(-1)[j]) <= 1e-6 + 1e-4 * abs(g.reshape(-1)[j])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_fd_check_smooth_components(seed):
    """float32, step 1e-2, on components whose stencil crosses no ReLU/pool switch."""
    r = Rng(seed)
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), r)
    x = r.random(64).reshape(8, 8, 1).astype(np.float32)
    comps = [c for c in gradcheck.finite_difference_check(net, x, seed % 5) if c.magnitude > 1e-3]
    smooth = [c for c in comps if not c.crossed]
    assert len(smooth) > 0.7 * len(comps)
    assert max(c.rel_error for c in smooth) <= 2e-2


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_fd_check_float64_small_step(seed):
    """With float64 and a tiny step no stencil reaches a kink, so every component must agree."""
    r = Rng(seed)
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), r)
    for p in net.params:
        for k in p:
            p[k] = p[k].astype(np.float64)
    x = r.random(64).reshape(8, 8, 1)
    comps = [c for c in gradcheck.finite_difference_check(net, x, seed % 5, step=1e-6) if c.magnitude > 1e-3]
    assert max(c.rel_error for c in comps) <= 1e-5


# -- config -----------------------------------------------------------------


def test_config_file_roundtrip(tmp_path):
    doc = nn.dump_config(nn.small_config(4), (16, 16, 3))
    p = tmp_path / "net.json"
    p.write_text(json.dumps(doc))
    layers, shape = nn.load_config(str(p))
    assert layers == nn.small_config(4)
    assert shape == (16, 16, 3)


def test_shipped_small_config_uses_class_count():
    from importlib import resources

    path = resources.files("fgsm_lab.configs").joinpath("small.json")
    layers, shape = nn.load_config(str(path), num_classes=7)
    assert layers == nn.small_config(7)
    assert shape == (32, 32, 3)


def test_config_schema_rejects_bad_docs(tmp_path):
    for doc in (
        {"layers": [{"kind": "conv2d"}]},
        {"layers": [{"kind": "dense", "units": 0}]},
        {"layers": [{"kind": "dropout", "rate": 1.0}]},
        {"layers": [{"kind": "lstm"}]},
        {"layer": []},
    ):
        with pytest.raises(FormatError):
            nn.parse_config(doc, 5)


# -- model file -------------------------------------------------------------


def test_model_roundtrip_bit_exact(tmp_path):
    net = nn.Network.build(nn.small_config(5) + [], (16, 16, 3), 3)
    path = tmp_path / "m.bin"
    nn.save_model(net, path)
    back = nn.load_model(path)
    assert back.layers == net.layers
    assert back.input_shape == net.input_shape
    for a, b in zip(net.param_arrays(), back.param_arrays()):
        assert a.shape == b.shape and a.tobytes() == b.tobytes()


def test_model_roundtrip_fused_activations(tmp_path):
    layers = [nn.Conv2D(4, 3, 2, "valid", "relu"), nn.MaxPool(2, 1), nn.Flatten(),
              nn.Dropout(0.3), nn.Dense(6, "relu"), nn.Dense(3, "softmax")]
    net = nn.Network.build(layers, (9, 9, 2), 1)
    nn.save_model(net, tmp_path / "m.bin")
    assert nn.load_model(tmp_path / "m.bin").layers == layers


def test_model_header_constants(tmp_path):
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), 0)
    nn.save_model(net, tmp_path / "m.bin")
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:4] == b"FGSM"
    assert struct.unpack("<II", raw[4:12]) == (1, len(net.layers))


def test_model_format_errors(tmp_path):
    net = nn.Network.build(nn.small_config(5), (8, 8, 1), 0)
    p = tmp_path / "m.bin"
    nn.save_model(net, p)
    raw = bytearray(p.read_bytes())

    bad = bytearray(raw)
    bad[0] ^= 0xFF
    p.write_bytes(bad)
    with pytest.raises(BadMagicError):
        nn.load_model(p)

    bad = bytearray(raw)
    bad[4:8] = struct.pack("<I", 2)
    p.write_bytes(bad)
    with pytest.raises(VersionMismatchError):
        nn.load_model(p)

    p.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(TruncatedError):
        nn.load_model(p)

    bad = bytearray(raw)
    bad[17] = 200  # first layer tag
    p.write_bytes(bad)
    with pytest.raises(FormatError):
        nn.load_model(p)


@settings(max_examples=25, deadline=None)
@given(st.binary(min_size=0, max_size=64))
def test_model_loader_never_crashes_on_garbage(tmp_path_factory, blob):
    p = tmp_path_factory.mktemp("g") / "m.bin"
    p.write_bytes(b"FGSM" + blob)
    try:
        nn.load_model(p)
    except FormatError:
        pass
