import math

import numpy as np
import pytest

from gradnorm import network, toytasks
from gradnorm.linalg import Rng


def test_two_task_benchmark_shapes():
    ts = toytasks.generate_taskset(0, 2, (1.0, 100.0))
    assert ts.base.shape == (100, 250)
    assert all(e.shape == (100, 250) for e in ts.epsilons)
    assert ts.sigmas == (1.0, 100.0)
    assert ts.num_tasks == 2


def test_same_seed_same_matrices():
    a = toytasks.generate_taskset(3, 2, (1.0, 2.0), 20, 10)
    b = toytasks.generate_taskset(3, 2, (1.0, 2.0), 20, 10)
    np.testing.assert_array_equal(a.base, b.base)
    for x, y in zip(a.epsilons, b.epsilons):
        np.testing.assert_array_equal(x, y)
    c = toytasks.generate_taskset(4, 2, (1.0, 2.0), 20, 10)
    assert not np.array_equal(a.base, c.base)


def test_task_streams_are_independent_of_task_count():
    two = toytasks.generate_taskset(5, 2, (1.0, 2.0), 20, 10)
    three = toytasks.generate_taskset(5, 3, (1.0, 2.0, 3.0), 20, 10)
    np.testing.assert_array_equal(two.base, three.base)
    np.testing.assert_array_equal(two.epsilons[1], three.epsilons[1])


def test_scales_are_standard_deviations():
    ts = toytasks.generate_taskset(1, 2, (1.0, 1.0), 250, 100)
    assert abs(ts.base.std() / 10.0 - 1) < 0.02
    assert abs(np.std(ts.epsilons) / 3.5 - 1) < 0.02
    var = toytasks.generate_taskset(1, 2, (1.0, 1.0), 250, 100, scale_is_variance=True)
    assert abs(var.base.std() / math.sqrt(10.0) - 1) < 0.02
    assert abs(np.std(var.epsilons) / math.sqrt(3.5) - 1) < 0.02


def test_sampled_sigmas():
    ts = toytasks.generate_taskset(0, 10)
    assert len(ts.sigmas) == 10 and all(s > 0 for s in ts.sigmas)
    assert ts.sigmas == toytasks.generate_taskset(0, 10).sigmas
    many = toytasks.sample_sigmas(Rng(1), 20000, 50.0)
    # mean of |N(0, s)| is s * sqrt(2 / pi)
    assert abs(np.mean(many) / (50 * math.sqrt(2 / math.pi)) - 1) < 0.02


def test_targets_formula():
    ts = toytasks.generate_taskset(2, 2, (1.5, 40.0), 6, 4)
    x = Rng(0).normal(18).reshape(3, 6)
    for i, t in enumerate(ts.targets(x)):
        want = np.empty((3, 4))
        for r in range(3):
            for o in range(4):
                want[r, o] = ts.sigmas[i] * math.tanh(sum((ts.base[o, j] + ts.epsilons[i][o, j]) * x[r, j]
                                                          for j in range(6)))
        np.testing.assert_allclose(t, want, rtol=1e-12, atol=1e-12)


def test_sample_batch_properties():
    ts = toytasks.generate_taskset(0, 3, (1.0, 5.0, 100.0), 8, 5)
    batch = toytasks.sample_batch(ts, Rng(1), 40)
    assert batch.inputs.shape == (40, 8)
    for t, s in zip(batch.targets, ts.sigmas):
        assert t.shape == (40, 5)
        assert np.all(np.abs(t) <= s)
    zero = ts.targets(np.zeros((2, 8)))
    assert all(np.all(t == 0) for t in zero)
    with pytest.raises(ValueError):
        toytasks.sample_batch(ts, Rng(1), 0)


def test_identical_tasks_identical_targets():
    ts = toytasks.generate_taskset(0, 2, (3.0, 3.0), 8, 5)
    twin = toytasks.ToyTaskSet(ts.base, (ts.epsilons[0], ts.epsilons[0]), (3.0, 3.0), 8, 5, 0)
    t = twin.targets(Rng(2).normal(16).reshape(2, 8))
    np.testing.assert_array_equal(t[0], t[1])


def test_sigma_scaling():
    a = toytasks.generate_taskset(0, 1, (2.0,), 8, 5)
    b = toytasks.ToyTaskSet(a.base, a.epsilons, (6.0,), 8, 5, 0)
    x = Rng(3).normal(40).reshape(5, 8)
    ta, tb = a.targets(x)[0], b.targets(x)[0]
    np.testing.assert_allclose(tb, 3 * ta, rtol=1e-15)
    zero = np.zeros_like(ta)
    assert network.squared_loss(zero, tb) == pytest.approx(9 * network.squared_loss(zero, ta), rel=1e-13)


def test_initial_loss_ordering():
    r = toytasks.expected_initial_loss_ordering(toytasks.generate_taskset(0, 2, (1.0, 100.0), 8, 5))
    assert r.order[0] == 1 and not r.tied
    assert toytasks.expected_initial_loss_ordering(toytasks.generate_taskset(0, 2, (4.0, 4.0), 8, 5)).tied


def test_measured_initial_losses_follow_sigma():
    sigmas = (2.0, 30.0, 0.5, 9.0)
    ts = toytasks.generate_taskset(7, 4, sigmas, 40, 10)
    model = network.init_model(Rng(1), 40, 10, 4, hidden=20, depth=2)
    batch = toytasks.sample_batch(ts, Rng(9), 10000)
    preds, _ = network.forward(model, batch.inputs)
    losses = [network.squared_loss(p, t) for p, t in zip(preds, batch.targets)]
    assert list(np.argsort(losses)[::-1]) == toytasks.expected_initial_loss_ordering(ts).order


def test_rejects_bad_sigmas():
    with pytest.raises(ValueError):
        toytasks.generate_taskset(0, 2, (1.0, 0.0), 4, 3)
    with pytest.raises(ValueError):
        toytasks.generate_taskset(0, 2, (1.0,), 4, 3)
