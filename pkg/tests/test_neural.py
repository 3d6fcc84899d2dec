import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from drowsense.model import LONG_CLASSES, SHORT_CLASSES
from drowsense.neural import (
    BatchNorm,
    FusionDnn,
    LstmStack,
    StackSpec,
    batch_normalize,
    classify,
    cross_entropy,
    fuse,
    gradient_check,
    lstm_cell_step,
    softmax,
    stack_forward,
)
from drowsense.training import FeatureSet, TrainConfig, train


def scalar_lstm(x_t, h_prev, c_prev, W, b):
    """Element-by-element LSTM step with gate blocks [forget, input, candidate, output]."""
    H = len(h_prev)
    u = list(h_prev) + list(x_t)
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    z = [b[j] + sum(u[r] * W[r][j] for r in range(len(u))) for j in range(4 * H)]
    h, c = [], []
    for k in range(H):
        f, i = sig(z[k]), sig(z[H + k])
        g, o = math.tanh(z[2 * H + k]), sig(z[3 * H + k])
        c.append(f * c_prev[k] + i * g)
        h.append(o * math.tanh(c[k]))
    return h, c


# --- LSTM cell ---------------------------------------------------------------------

def test_cell_zero_params_zero_state():
    h, c = lstm_cell_step(np.ones(3), np.zeros(4), np.zeros(4), np.zeros((7, 16)), np.zeros(16))
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


@given(st.integers(0, 2**32 - 1))
def test_cell_matches_scalar_reference(seed):
    rng = np.random.default_rng(seed)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=4), rng.normal(size=4)
    W, b = rng.normal(size=(7, 16)), rng.normal(size=16)
    h, c = lstm_cell_step(x, h0, c0, W, b)
    h_ref, c_ref = scalar_lstm(x, h0, c0, W.tolist(), b.tolist())
    np.testing.assert_allclose(h, h_ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(c, c_ref, rtol=0, atol=1e-12)


def test_cell_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        lstm_cell_step(np.ones(3), np.zeros(4), np.zeros(4), np.zeros((6, 16)), np.zeros(16))
    with pytest.raises(ValueError):
        lstm_cell_step(np.ones(3), np.zeros(4), np.zeros(5), np.zeros((7, 16)), np.zeros(16))


def test_memory_retained_over_28_steps():
    rng = np.random.default_rng(0)
    H, D = 4, 3
    W = rng.normal(scale=0.1, size=(H + D, 4 * H))
    b = np.zeros(4 * H)
    b[:H] = 40.0        # forget gate open
    b[H:2 * H] = -40.0  # input gate shut
    c0 = rng.normal(size=H)
    h, c = np.zeros(H), c0
    for _ in range(28):
        h, c = lstm_cell_step(rng.normal(size=D), h, c, W, b)
    np.testing.assert_allclose(c, c0, atol=1e-6)


def test_layer_forward_matches_cell_loop():
    rng = np.random.default_rng(1)
    stack = LstmStack(StackSpec("t", 1, 5, ("a", "b"), hidden=4), 3, encoding="raw", seed=2)
    layer = stack.lstms[0]
    x = rng.normal(size=(2, 5, 3))
    hs, _ = layer.forward(x)
    for s in range(2):
        h, c = np.zeros(4), np.zeros(4)
        for t in range(5):
            h, c = lstm_cell_step(x[s, t], h, c, layer.W, layer.b)
            np.testing.assert_allclose(hs[s, t], h, atol=1e-14)


# --- softmax, classify, cross-entropy --------------------------------------------

def test_softmax_sums_to_one_on_10k_instances():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=20, size=(10_000, 5))
    p = softmax(logits)
    assert np.max(np.abs(p.sum(axis=1) - 1)) <= 1e-9
    assert np.all((p >= 0) & (p <= 1))


@given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-500, 500)))
def test_softmax_property(z):
    p = softmax(z)
    assert abs(p.sum() - 1) <= 1e-9
    # near-equal logits may round to equal probabilities, so compare values
    assert p[classify(z)] == p.max()


@given(st.lists(st.integers(-300, 300), min_size=2, max_size=6, unique=True), st.floats(0.1, 10))
def test_classify_invariant_to_temperature(z, temp):
    z = np.asarray(z, dtype=float) / 10
    assert classify(softmax(z / temp)) == classify(z) == int(np.argmax(z))


def test_classify_examples():
    # class ordinals are zero-based here: the second of three classes is index 1
    assert classify([0.1, 0.7, 0.2]) == 1
    assert classify([1 / 3, 1 / 3, 1 / 3]) == 0
    assert classify([0, 0, 0, 1]) == 3


def test_cross_entropy_examples():
    assert cross_entropy([[0, 1, 0]], [[0, 1, 0]]) == pytest.approx(0.0, abs=1e-12)
    assert cross_entropy([[1 / 3] * 3], [[1, 0, 0]]) == pytest.approx(math.log(3))
    assert cross_entropy([[1, 0, 0]], [[0, 1, 0]]) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError):
        cross_entropy([[0.5, 0.5]], [[1, 0, 0]])


@given(st.integers(0, 1000))
def test_cross_entropy_non_negative(seed):
    rng = np.random.default_rng(seed)
    p = softmax(rng.normal(size=(6, 3)))
    y = np.eye(3)[rng.integers(0, 3, 6)]
    assert cross_entropy(p, y) >= 0


# --- batch norm --------------------------------------------------------------------

@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(16, 256))
def test_batch_norm_train_mode_standardises(seed, rows):
    rng = np.random.default_rng(seed)
    scale = rng.uniform(0.5, 100, size=6)
    x = rng.normal(size=(rows, 6)) * scale + rng.uniform(-50, 50, size=6)
    y = batch_normalize(x, BatchNorm(6), "train")
    assert np.max(np.abs(y.mean(axis=0))) < 1e-6
    # the epsilon shrinks the variance to v / (v + eps); negligible unless v is tiny
    v = x.var(axis=0)
    np.testing.assert_allclose(y.var(axis=0), v / (v + 1e-5), rtol=1e-9)
    assert np.max(np.abs(y.var(axis=0) - 1)) < 1e-3


def test_batch_norm_fixed_point_and_inference():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(200, 3))
    x = (x - x.mean(0)) / x.std(0)
    bn = BatchNorm(3)
    np.testing.assert_allclose(batch_normalize(x, bn, "train"), x, atol=1e-4)
    np.testing.assert_allclose(bn.running_mean, 0.1 * x.mean(0), atol=1e-12)
    a = batch_normalize(x, bn, "infer")
    b = batch_normalize(x, bn, "infer")
    np.testing.assert_array_equal(a, b)


def test_batch_norm_rejects_single_row():
    with pytest.raises(ValueError):
        batch_normalize(np.ones((1, 3)), BatchNorm(3), "train")


def test_batch_norm_shares_statistics_across_timesteps():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 7, 3)) + np.arange(7)[None, :, None]
    y = BatchNorm(3).forward(x, train=True)[0]
    flat = y.reshape(-1, 3)
    assert np.max(np.abs(flat.mean(0))) < 1e-9
    assert not np.allclose(y.mean(axis=0), 0)  # per-timestep means are not removed


# --- stacks and fusion ----------------------------------------------------------------

def toy_stack(layers, timesteps, classes, seed=0, input_dim=3, encoding="sincos"):
    return LstmStack(StackSpec("toy", layers, timesteps, classes, hidden=4), input_dim, encoding, seed=seed)


def test_stack_forward_probabilities_and_padding():
    stack = toy_stack(2, 11, SHORT_CLASSES)
    rng = np.random.default_rng(0)
    frames = rng.uniform(-np.pi, np.pi, size=(4, 3))
    p = stack_forward(frames, stack)
    assert p.shape == (11, 3)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-9)
    padded = np.concatenate([np.zeros((7, 3)), frames])
    np.testing.assert_array_equal(p, stack_forward(padded, stack))
    np.testing.assert_array_equal(p, stack_forward(frames, stack))


def test_stack_forward_rejects_bad_input():
    stack = toy_stack(2, 11, SHORT_CLASSES)
    with pytest.raises(ValueError):
        stack_forward(np.zeros((3, 5)), stack)
    with pytest.raises(ValueError):
        stack_forward(np.zeros((12, 3)), stack)


def test_zero_head_gives_uniform_output():
    stack = toy_stack(3, 28, LONG_CLASSES)
    stack.head_W[...] = 0
    p = stack_forward(np.random.default_rng(0).normal(size=(28, 3)), stack)
    np.testing.assert_allclose(p, 0.5, atol=1e-15)


def test_fuse_zero_weights_and_range():
    dnn = FusionDnn(5, 4)
    for p in dnn.params().values():
        p[...] = 0
    assert fuse([0.2, 0.3, 0.5], [0.6, 0.4], dnn) == 0.5
    dnn = FusionDnn(5, 4, seed=3)
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = fuse(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(2)), dnn)
        assert 0 < r < 1
    with pytest.raises(ValueError):
        fuse([0.5, 0.5], [0.6, 0.4], dnn)


# --- gradients ------------------------------------------------------------------------

def toy_batch(stack, batch=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-np.pi, np.pi, size=(batch, stack.timesteps, stack.input_dim))
    y = rng.integers(0, len(stack.classes), batch)
    return x, y


@pytest.mark.parametrize("layers, timesteps, classes", [(2, 11, SHORT_CLASSES), (3, 28, LONG_CLASSES)])
def test_gradient_check_stacks(layers, timesteps, classes):
    stack = toy_stack(layers, timesteps, classes, seed=4)
    x, y = toy_batch(stack)
    report = gradient_check(stack, x, y)
    assert report.passed, report


def test_gradient_check_all_steps_loss():
    stack = toy_stack(2, 6, SHORT_CLASSES, seed=1)
    x, _ = toy_batch(stack)
    y = np.random.default_rng(2).integers(0, 3, (3, 6))
    _, grads = stack.loss_and_grads(x, y, "all", update_stats=False)
    p = stack.params()["lstm0.W"]
    h = 1e-5
    for idx in [(0, 0), (3, 7), (6, 15)]:
        old = p[idx]
        p[idx] = old + h
        plus = stack.loss_and_grads(x, y, "all", update_stats=False)[0]
        p[idx] = old - h
        minus = stack.loss_and_grads(x, y, "all", update_stats=False)[0]
        p[idx] = old
        assert grads["lstm0.W"][idx] == pytest.approx((plus - minus) / (2 * h), rel=1e-4, abs=1e-9)


def test_gradient_check_fusion():
    dnn = FusionDnn(5, 6, seed=2)
    rng = np.random.default_rng(0)
    d = np.concatenate([rng.dirichlet(np.ones(3), 8), rng.dirichlet(np.ones(2), 8)], axis=1)
    y = rng.integers(0, 2, 8)
    report = gradient_check(dnn, d, y)
    assert report.passed, report


def test_zero_loss_point_is_stationary():
    dnn = FusionDnn(5, 3, seed=0)
    dnn.W2[...] = 0
    dnn.b2[...] = 60.0
    d = np.random.default_rng(0).dirichlet(np.ones(5), 4)
    loss, grads = dnn.loss_and_grads(d, np.ones(4))
    assert loss < 1e-12
    assert math.sqrt(sum(float((g ** 2).sum()) for g in grads.values())) < 1e-8

    stack = toy_stack(2, 5, SHORT_CLASSES)
    stack.head_W[...] = 0
    stack.head_b[...] = [60.0, 0.0, 0.0]
    x, _ = toy_batch(stack)
    report = gradient_check(stack, x, np.zeros(3, int))
    assert report.grad_norm < 1e-8


# --- training on a toy problem ----------------------------------------------------------

def toy_feature_set(n=200, frames=12, dim=4, seed=0):
    """Half the samples carry a constant offset on frames 4..8; a threshold on the mean separates them."""
    rng = np.random.default_rng(seed)
    feats, frame_actions, actions, intervals = [], [], [], []
    for s in range(n):
        x = rng.normal(scale=0.3, size=(frames, dim))
        action = "Nodding" if s % 2 else "Normal"
        labels = ["Normal"] * frames
        if action == "Nodding":
            x[4:9] += 1.5
            labels[4:9] = ["Nodding"] * 5
        feats.append(x)
        frame_actions.append(tuple(labels))
        actions.append(action)
        intervals.append((1.0, 2.25) if action == "Nodding" else None)
    return FeatureSet(feats, frame_actions, actions, intervals, list(range(n)))


TOY_CONFIG = TrainConfig(learning_rate=1e-2, epochs=5, hidden=8, patience=5, train_fraction=0.8,
                         val_fraction=0.2, fusion_epochs=10, encoding="raw", compute_dtype="float64")


@pytest.fixture(scope="module")
def toy_run():
    return train(toy_feature_set(), "2-LSTM-DNN", TOY_CONFIG)


def test_toy_training_loss_decreases(toy_run):
    _, report = toy_run
    losses = [e["train_loss"] for e in report["branches"]["single"]]
    assert len(losses) == 5
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_toy_training_validation_accuracy(toy_run):
    _, report = toy_run
    assert max(e["val_acc"] for e in report["branches"]["single"]) >= 0.95


def test_toy_training_deterministic(toy_run):
    model, _ = toy_run
    again, _ = train(toy_feature_set(), "2-LSTM-DNN", TOY_CONFIG)
    for a, b in zip([*model.branches, model.fusion], [*again.branches, again.fusion]):
        for key, value in a.params().items():
            np.testing.assert_array_equal(value, b.params()[key])


def test_fusion_monotone_in_drowsy_input(toy_run):
    model, _ = toy_run
    w_in = model.fusion.W1 @ (model.fusion.W2[:, 0] * 1.0)  # sign of the linearised response
    base = np.array([0.7, 0.1, 0.1, 0.1])
    more = np.array([0.4, 0.4, 0.1, 0.1])
    r0, r1 = model.fusion.forward(base), model.fusion.forward(more)
    # the trained net maps more nodding probability to higher drowsiness
    assert r1 > r0, (r0, r1, w_in)


def test_train_rejects_single_class():
    data = toy_feature_set(20)
    only_normal = data.subset([i for i, a in enumerate(data.actions) if a == "Normal"])
    with pytest.raises(ValueError, match="single class"):
        train(only_normal, "2-LSTM-DNN", TOY_CONFIG)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(train_fraction=0.7, val_fraction=0.2)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
