import math

import numpy as np
import pytest

from gradnorm import gradcheck, linalg, network
from gradnorm.linalg import Rng, derive_seed
from gradnorm.network import Dense, MlpModel


def test_init_shapes_and_count():
    model = network.init_model(Rng(0), 250, 100, 2)
    assert [l.weight.shape for l in model.trunk] == [(250, 100), (100, 100), (100, 100), (100, 100)]
    assert [h.weight.shape for h in model.heads] == [(100, 100), (100, 100)]
    assert model.num_parameters() == (250 * 100 + 100 + 3 * (100 * 100 + 100)) + 2 * (100 * 100 + 100)
    assert model.shared_layer_index == 3
    assert all(np.all(l.bias == 0) for l in model.layers())


def test_init_deterministic_and_scaled():
    a = network.init_model(Rng(5), 250, 100, 2)
    b = network.init_model(Rng(5), 250, 100, 2)
    for p, q in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(p, q)
    std = a.trunk[0].weight.std()
    assert abs(std / math.sqrt(2 / 250) - 1) < 0.02


def test_init_rejects_bad_sizes():
    with pytest.raises(ValueError):
        network.init_model(Rng(0), 0, 3, 2)
    with pytest.raises(ValueError):
        network.init_model(Rng(0), 3, 3, 2, depth=2, shared_layer_index=2)


def test_forward_zero_model():
    model = network.init_model(Rng(0), 4, 3, 2, hidden=5, depth=2)
    for p in model.parameters():
        p[...] = 0.0
    preds, cache = network.forward(model, Rng(1).normal(12).reshape(3, 4))
    assert all(np.all(p == 0) for p in preds)
    assert [a.shape for a in cache.activations] == [(3, 4), (3, 5), (3, 5)]


def test_identical_heads_give_identical_predictions():
    model = network.init_model(Rng(2), 4, 3, 3, hidden=5, depth=2)
    model.heads[2].weight[:] = model.heads[0].weight
    model.heads[2].bias[:] = model.heads[0].bias
    preds, _ = network.forward(model, Rng(3).normal(8).reshape(2, 4))
    np.testing.assert_array_equal(preds[0], preds[2])


def test_forward_hand_computed():
    # x -> relu(2x - 1) -> 3h + 0.5
    model = MlpModel([Dense(np.array([[2.0]]), np.array([-1.0]))], [Dense(np.array([[3.0]]), np.array([0.5]))])
    preds, _ = network.forward(model, np.array([[0.25], [1.0], [2.0]]))
    np.testing.assert_array_equal(preds[0], [[0.5], [3.5], [9.5]])


def test_forward_rejects_wrong_width():
    model = network.init_model(Rng(0), 4, 3, 1, hidden=5, depth=1)
    with pytest.raises(linalg.ShapeError):
        network.forward(model, np.zeros((2, 5)))


def test_squared_loss_examples():
    t = Rng(0).normal(6).reshape(2, 3)
    assert network.squared_loss(t, t) == 0.0
    assert network.squared_loss(t + 0.75, t) == pytest.approx(0.5625, rel=1e-12)
    assert network.squared_loss(np.array([[1.0, 2.0]]), np.array([[0.0, 0.0]])) == 2.5
    with pytest.raises(linalg.ShapeError):
        network.squared_loss(np.zeros((1, 2)), np.zeros((2, 1)))


def test_squared_loss_grad_matches_differences():
    rng = Rng(4)
    p, t = rng.normal(6).reshape(2, 3), rng.normal(6).reshape(2, 3)
    num = gradcheck.central_difference(lambda: network.squared_loss(p, t), p, 1e-6)
    np.testing.assert_allclose(network.squared_loss_grad(p, t), num, rtol=1e-7, atol=1e-9)


def _setup(seed, T=2, depth=3, shared=-1):
    rng = Rng(seed)
    model = network.init_model(rng, 4, 3, T, hidden=5, depth=depth, shared_layer_index=shared)
    x = rng.normal(12).reshape(3, 4)
    targets = [rng.normal(9).reshape(3, 3) for _ in range(T)]
    preds, cache = network.forward(model, x)
    res = [network.squared_loss_grad(p, t) for p, t in zip(preds, targets)]
    return model, x, targets, cache, res


def test_backward_zero_weights_and_linearity():
    model, _, _, cache, res = _setup(0)
    total, tg = network.backward(model, cache, res, [0.0, 0.0], full_task_grads=True)
    assert all(np.all(g == 0) for g in total)
    total, _ = network.backward(model, cache, res, [1.0, 1.0])
    for j, g in enumerate(total):
        np.testing.assert_allclose(g, tg.full[0][j] + tg.full[1][j], rtol=1e-13, atol=1e-15)
    w = np.array([0.3, 1.7])
    total, _ = network.backward(model, cache, res, w)
    for j, g in enumerate(total):
        np.testing.assert_allclose(g, w[0] * tg.full[0][j] + w[1] * tg.full[1][j], rtol=1e-13, atol=1e-15)


@pytest.mark.parametrize("shared", [-1, -2, 0])
def test_backward_matches_finite_differences(shared):
    for k in range(5):
        model, x, targets, _, _ = _setup(derive_seed(k, "fd"), depth=3, shared=shared)
        worst_total, worst_task = gradcheck.network_gradient_errors(model, x, targets, np.array([0.7, 1.3]), h=1e-5)
        assert worst_total < 1e-4
        assert worst_task < 1e-4


def test_shared_norm_matches_finite_differences():
    model, x, targets, cache, res = _setup(9)
    _, tg = network.backward(model, cache, res, [1.0, 1.0])
    W = model.shared_weight
    for i, w_i in ((0, 0.8), (1, 2.2)):
        def weighted():
            preds, _ = network.forward(model, x)
            return w_i * network.squared_loss(preds[i], targets[i])
        num = gradcheck.central_difference(weighted, W, 1e-5)
        got = network.shared_layer_grad_norm(tg, i, w_i)
        assert got == pytest.approx(linalg.l2_norm(num), rel=1e-4)
        assert network.shared_layer_grad_norm(tg, i, 2 * w_i) == 2 * got
    assert network.shared_layer_grad_norm(tg, 0, 0.0) == 0.0
    with pytest.raises(ValueError):
        network.shared_layer_grad_norm(tg, 0, -1.0)


def test_dead_units_get_zero_gradient():
    model, x, targets, _, _ = _setup(3)
    # a unit that is dead for every sample contributes nothing to the next layer's weight gradient
    model.trunk[0].bias[:] = 0.0
    model.trunk[0].bias[1] = -1e6
    preds, cache = network.forward(model, x)
    res = [network.squared_loss_grad(p, t) for p, t in zip(preds, targets)]
    total, _ = network.backward(model, cache, res, [1.0, 1.0])
    assert np.all(total[0][:, 1] == 0.0)
    assert total[1][1] == 0.0
    assert np.all(total[2][1, :] == 0.0)


def test_identical_tasks_give_identical_norms():
    rng = Rng(12)
    model = network.init_model(rng, 4, 3, 2, hidden=5, depth=2)
    model.heads[1].weight[:] = model.heads[0].weight
    x = rng.normal(12).reshape(3, 4)
    t = rng.normal(9).reshape(3, 3)
    preds, cache = network.forward(model, x)
    res = [network.squared_loss_grad(p, t) for p in preds]
    _, tg = network.backward(model, cache, res, [1.0, 1.0])
    assert network.shared_layer_grad_norm(tg, 0, 1.0) == network.shared_layer_grad_norm(tg, 1, 1.0)


def test_stale_cache_rejected():
    model, _, _, cache, res = _setup(1)
    model.touch()
    with pytest.raises(ValueError, match="cache"):
        network.backward(model, cache, res, [1.0, 1.0])
    other = model.copy()
    with pytest.raises(ValueError, match="cache"):
        network.backward(other, cache, res, [1.0, 1.0])


def test_gradient_shapes_match_parameters():
    model, _, _, cache, res = _setup(2)
    total, tg = network.backward(model, cache, res, [1.0, 1.0], full_task_grads=True)
    assert [g.shape for g in total] == [p.shape for p in model.parameters()]
    assert [g.shape for g in tg.full[1]] == [p.shape for p in model.parameters()]
    assert tg.shared[0].shape == model.shared_weight.shape
