"""Finite-difference verification of every op's backward, Adam behavior,
and checkpoint round trips.  All gradient checks run in 64-bit."""

import numpy as np
import pytest

from capalign.nn import Adam, ParameterStore, finite_difference_check, relative_error
from capalign.nn import ops

DELTA = 1e-5
SEEDS = range(10)


def _store(seed):
    return ParameterStore(seed=seed, dtype=np.float64)


def _gru_weights(store, in_dim, hid):
    for gate in ("r", "z", "h"):
        store.add(f"g.W{gate}", (hid, in_dim))
        store.add(f"g.U{gate}", (hid, hid))
        store.add(f"g.b{gate}", (hid,))
    return lambda: ops.GruWeights(*(store[f"g.{s}"].value for s in
                                    ("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wh", "Uh", "bh")))


def test_gru_zero_weights_halves_state():
    # all weights zero: z = sigmoid(0) = 0.5, hh = tanh(0) = 0, h' = 0.5 h
    hid, b = 4, 3
    w = ops.GruWeights(*(np.zeros((hid, hid)) for _ in range(2)), np.zeros(hid),
                       *(np.zeros((hid, hid)) for _ in range(2)), np.zeros(hid),
                       *(np.zeros((hid, hid)) for _ in range(2)), np.zeros(hid))
    h = np.ones((b, hid))
    x = np.random.default_rng(0).normal(size=(b, hid))
    h_new, cache = ops.gru_cell_forward(x, h, w)
    z, hh = cache[3], cache[5]
    assert np.allclose(z, 0.5)
    assert np.allclose(hh, 0.0)
    assert np.allclose(h_new, 0.5 * h)


def test_linear_identity_passthrough():
    x = np.random.default_rng(1).normal(size=(5, 4))
    y, _ = ops.linear_forward(x, np.eye(4), np.zeros(4))
    assert np.array_equal(y, x)


def test_gru_gradient_matches_fd_tightly():
    # x in R^3, h in R^4, loss = sum of h'; tight 1e-6 relative bound in 64-bit
    store = _store(7)
    weights = _gru_weights(store, 3, 4)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 3))
    h = rng.normal(size=(1, 4))

    def loss():
        h_new, _ = ops.gru_cell_forward(x, h, weights())
        return h_new.sum()

    h_new, cache = ops.gru_cell_forward(x, h, weights())
    _, _, grads = ops.gru_cell_backward(np.ones_like(h_new), cache, weights())
    for suffix, grad in zip(("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wh", "Uh", "bh"), grads):
        store[f"g.{suffix}"].grad += grad
    report = finite_difference_check(store, loss, delta=DELTA)
    assert max(report.values()) < 1e-6


@pytest.mark.parametrize("seed", SEEDS)
def test_linear_backward_fd(seed):
    store = _store(seed)
    store.add("W", (4, 3))
    store.add("b", (4,))
    x = np.random.default_rng(seed).normal(size=(5, 3))
    target = np.random.default_rng(seed + 1).normal(size=(5, 4))

    def loss():
        y, _ = ops.linear_forward(x, store["W"].value, store["b"].value)
        return ((y - target) ** 2).sum()

    y, cache = ops.linear_forward(x, store["W"].value, store["b"].value)
    dx, dW, db = ops.linear_backward(2.0 * (y - target), cache)
    store["W"].grad += dW
    store["b"].grad += db
    report = finite_difference_check(store, loss, delta=DELTA)
    assert max(report.values()) < 1e-4

    # input gradient too
    x_store = _store(seed)
    x_store.add("x", (5, 3), init=x)
    def loss_x():
        y2, _ = ops.linear_forward(x_store["x"].value, store["W"].value, store["b"].value)
        return ((y2 - target) ** 2).sum()
    x_store["x"].grad += dx
    report_x = finite_difference_check(x_store, loss_x, delta=DELTA)
    assert max(report_x.values()) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_embedding_backward_fd(seed):
    store = _store(seed)
    store.add("E", (6, 3))
    ids = np.array([[0, 2, 2], [5, 1, 2]])
    target = np.random.default_rng(seed).normal(size=(2, 3, 3))

    def loss():
        y, _ = ops.embedding_forward(ids, store["E"].value)
        return ((y - target) ** 2).sum()

    y, _ = ops.embedding_forward(ids, store["E"].value)
    ops.embedding_backward(2.0 * (y - target), ids, store["E"].grad)
    report = finite_difference_check(store, loss, delta=DELTA)
    assert max(report.values()) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_ce_backward_fd(seed):
    store = _store(seed)
    store.add("logits", (6, 5))
    targets = np.array([0, 3, 4, 1, 2, 2])
    mask = np.array([1.0, 1.0, 0.0, 1.0, 1.0, 1.0])

    def loss():
        value, _ = ops.softmax_cross_entropy(store["logits"].value.copy(), targets, mask)
        return value

    _, dlogits = ops.softmax_cross_entropy(store["logits"].value.copy(), targets, mask)
    store["logits"].grad += dlogits
    report = finite_difference_check(store, loss, delta=DELTA)
    assert max(report.values()) < 1e-4


@pytest.mark.parametrize("seed", SEEDS)
def test_gru_batched_backward_fd(seed):
    store = _store(seed)
    weights = _gru_weights(store, 3, 4)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    h = rng.normal(size=(4, 4))
    u = rng.normal(size=(4, 4))  # random linear functional of h'

    def loss():
        h_new, _ = ops.gru_cell_forward(x, h, weights())
        return (h_new * u).sum()

    h_new, cache = ops.gru_cell_forward(x, h, weights())
    dx, dh, grads = ops.gru_cell_backward(u.copy(), cache, weights())
    for suffix, grad in zip(("Wr", "Ur", "br", "Wz", "Uz", "bz", "Wh", "Uh", "bh"), grads):
        store[f"g.{suffix}"].grad += grad
    report = finite_difference_check(store, loss, delta=DELTA)
    assert max(report.values()) < 1e-4

    inp = _store(seed)
    inp.add("x", (4, 3), init=x)
    inp.add("h", (4, 4), init=h)
    def loss_inputs():
        h_new2, _ = ops.gru_cell_forward(inp["x"].value, inp["h"].value, weights())
        return (h_new2 * u).sum()
    inp["x"].grad += dx
    inp["h"].grad += dh
    report2 = finite_difference_check(inp, loss_inputs, delta=DELTA)
    assert max(report2.values()) < 1e-4


def test_constant_loss_zero_gradients():
    store = _store(3)
    store.add("W", (3, 3))
    report = finite_difference_check(store, lambda: 1.0, delta=DELTA)
    assert max(report.values()) == 0.0
    assert np.all(store["W"].grad == 0)


def test_gradcheck_catches_corrupted_backward():
    # negative control: a deliberately wrong analytic gradient must fail
    store = _store(11)
    store.add("W", (3, 2))
    x = np.random.default_rng(11).normal(size=(4, 2))

    def loss():
        y, _ = ops.linear_forward(x, store["W"].value, np.zeros(3))
        return (y ** 2).sum()

    y, cache = ops.linear_forward(x, store["W"].value, np.zeros(3))
    _, dW, _ = ops.linear_backward(2.0 * y, cache)
    store["W"].grad += dW * 1.5   # corrupted
    report = finite_difference_check(store, loss, delta=DELTA)
    assert max(report.values()) > 1e-4


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(Exception, match=r"\(5, 3\)"):
        ops.linear_forward(np.zeros((2, 4)), np.zeros((5, 3)), np.zeros(5))


# ---------------------------------------------------------------------------
# Adam

def test_adam_single_step_matches_hand_computation():
    store = ParameterStore(seed=0, dtype=np.float64)
    store.add("p", (1,), init=np.zeros(1))
    opt = Adam(store, lr=1e-3)
    store["p"].grad[:] = 1.0
    opt.step()
    # m1=0.1, v1=0.001; bias-corrected m=1, v=1 -> step = lr/(1+eps)
    assert abs(store["p"].value[0] + 1e-3) < 1e-9
    assert np.all(store["p"].grad == 0)


def test_adam_zero_gradient_leaves_parameter():
    store = ParameterStore(seed=0, dtype=np.float64)
    store.add("p", (3,), init=np.array([1.0, -2.0, 3.0]))
    opt = Adam(store, lr=1e-3)
    opt.step()
    assert np.array_equal(store["p"].value, np.array([1.0, -2.0, 3.0]))


def test_adam_two_steps_match_closed_form_recursion():
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    g = 0.7
    store = ParameterStore(seed=0, dtype=np.float64)
    store.add("p", (1,), init=np.array([0.5]))
    opt = Adam(store, lr=lr)

    # independent recursion
    p, m, v = 0.5, 0.0, 0.0
    for t in (1, 2):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)

    for _ in range(2):
        store["p"].grad[:] = g
        opt.step()
    assert abs(store["p"].value[0] - p) < 1e-12


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    store = ParameterStore(seed=5, dtype=np.float32)
    store.add("a.W", (3, 4))
    store.add("a.b", (4,))
    store.add("scalar", (1,))
    path = tmp_path / "model.ckpt"
    store.save(path)
    loaded = ParameterStore.load(path, dtype=np.float32)
    for name in store.names():
        assert np.array_equal(loaded[name].value, store[name].value)
    path2 = tmp_path / "model2.ckpt"
    loaded.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_from_float64_store_is_stable(tmp_path):
    store = ParameterStore(seed=5, dtype=np.float64)
    store.add("W", (8, 2))
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    store.save(p1)
    ParameterStore.load(p1).save(p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_relative_error_zero_floor():
    assert relative_error(0.0, 1e-12) == 0.0
    assert relative_error(1.0, 2.0) == 0.5
