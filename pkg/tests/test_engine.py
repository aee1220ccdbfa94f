import math

import numpy as np
import pytest

from engine import dense
from engine.gradcheck import finite_diff_check, max_relative_error
from engine.losses import entropy, loss_mse, loss_soft_xent, loss_xent
from engine.optim import Optimizer, step
from models.network import DenseNet, GradTape, Layer
from utils.errors import DimensionError, DivergenceError, InvariantError


def _mse(net, batch):
    x, y = batch
    out, cache = dense.forward(net, x)
    loss, up = loss_mse(out, y)
    return loss, dense.backward(net, cache, up)


def _xent(net, batch):
    x, labels = batch
    out, cache = dense.forward(net, x)
    loss, up = loss_xent(out, labels)
    return loss, dense.backward(net, cache, up)


# ── Network construction ──────────────────────────────────

def test_mismatched_layers_are_rejected():
    with pytest.raises(DimensionError) as exc:
        DenseNet(layers=[
            Layer(np.zeros((3, 2)), np.zeros(3)),
            Layer(np.zeros((1, 4)), np.zeros(1)),
        ])
    assert exc.value.layer_index == 1


def test_softmax_only_as_head():
    with pytest.raises(DimensionError):
        DenseNet(layers=[
            Layer(np.zeros((3, 2)), np.zeros(3), "softmax"),
            Layer(np.zeros((1, 3)), np.zeros(1)),
        ])


def test_init_is_deterministic_and_bounded():
    a = dense.init_params([5, 7, 3], "tanh", 11)
    b = dense.init_params([5, 7, 3], "tanh", 11)
    assert a.same_params(b)
    bound = math.sqrt(6.0 / 5)
    assert np.all(np.abs(a.layers[0].weight) <= bound)
    assert np.all(a.layers[0].bias == 0.0)


def test_param_count_matches_sizes():
    sizes = dense.mlp_sizes(4, [6, 5], 2)
    net = dense.init_params(sizes, "tanh", 0)
    assert net.param_count == dense.mlp_param_count(sizes) == (4 + 1) * 6 + (6 + 1) * 5 + (5 + 1) * 2


# ── Forward / backward ────────────────────────────────────

def test_forward_vector_and_batch_agree(small_net, rng):
    x = rng.normal(size=(3, 4))
    batch_out, _ = dense.forward(small_net, x)
    single, _ = dense.forward(small_net, x[1])
    assert single.shape == (2,)
    np.testing.assert_allclose(single, batch_out[1], rtol=0, atol=1e-14)


def test_forward_rejects_wrong_width(small_net):
    with pytest.raises(DimensionError) as exc:
        dense.forward(small_net, np.zeros((2, 5)))
    assert exc.value.layer_index == 0


def test_empty_scales_are_bitwise_plain(small_net, rng):
    x = rng.normal(size=(8, 4))
    plain, _ = dense.forward(small_net, x)
    scaled, _ = dense.forward(small_net, x, {})
    assert np.array_equal(plain, scaled)


def test_unit_scales_equal_plain(small_net, rng):
    x = rng.normal(size=(8, 4))
    plain, _ = dense.forward(small_net, x)
    ones, _ = dense.forward(small_net, x, {1: np.ones(6)})
    np.testing.assert_allclose(ones, plain, atol=1e-14)


def test_scale_width_mismatch_names_layer(small_net):
    with pytest.raises(DimensionError) as exc:
        dense.forward(small_net, np.zeros((1, 4)), {1: np.ones(3)})
    assert exc.value.layer_index == 1


def test_backward_on_stale_cache_fails(small_net, rng):
    x, y = rng.normal(size=(4, 4)), rng.normal(size=(4, 2))
    out, cache = dense.forward(small_net, x)
    _, up = loss_mse(out, y)
    step(Optimizer(kind="sgd", learning_rate=0.1), small_net, dense.backward(small_net, cache, up))
    with pytest.raises(InvariantError):
        dense.backward(small_net, cache, up)


def test_backward_rejects_wrong_upstream(small_net, rng):
    _, cache = dense.forward(small_net, rng.normal(size=(4, 4)))
    with pytest.raises(DimensionError):
        dense.backward(small_net, cache, np.zeros((4, 3)))


def test_gradients_match_finite_differences(small_net, rng):
    x, y = rng.normal(size=(5, 4)), rng.normal(size=(5, 2))
    assert finite_diff_check(small_net, _mse, (x, y)) < 1e-4
    labels = rng.integers(0, 2, size=5)
    assert finite_diff_check(small_net, _xent, (x, labels)) < 1e-4


def test_scale_gradient_matches_finite_differences(small_net, rng):
    x, y = rng.normal(size=(3, 4)), rng.normal(size=(3, 2))
    delta = rng.uniform(-0.9, 0.9, size=6)

    def _loss():
        out, _ = dense.forward(small_net, x, {1: delta})
        return loss_mse(out, y)[0]

    out, cache = dense.forward(small_net, x, {1: delta})
    tape = dense.backward(small_net, cache, loss_mse(out, y)[1])
    assert max_relative_error([delta], [tape.scales[1]], _loss) < 1e-4


def test_relu_and_softmax_gradients(rng):
    net = dense.init_params([3, 5, 4], ["relu", "softmax"], rng, bias_scheme="uniform-fan-in")
    x, y = rng.normal(size=(6, 3)), rng.dirichlet(np.ones(4), size=6)
    assert finite_diff_check(net, _mse, (x, y)) < 1e-4


def test_max_relative_error_restores_parameters(small_net, rng):
    before = small_net.copy()
    finite_diff_check(small_net, _mse, (rng.normal(size=(2, 4)), rng.normal(size=(2, 2))))
    assert small_net.same_params(before)


def test_non_positive_step_is_rejected(small_net):
    with pytest.raises(ValueError):
        max_relative_error([], [], lambda: 0.0, h=0.0)


def test_tiny_gradient_errors_are_not_hidden_by_the_floor():
    w = np.ones(4)
    scale = 1e-9

    def _loss():
        return 0.5 * scale * float(w @ w)

    assert max_relative_error([w], [scale * w], _loss) < 1e-4
    assert max_relative_error([w], [1.01 * scale * w], _loss) > 1e-4


def test_tiny_gradient_layer_is_still_checked(rng):
    net = dense.init_params([4, 6, 2], ["tanh", "identity"], rng)
    net.layers[1].weight *= 1e-4
    net.layers[1].bias[:] = 0.0
    x, y = rng.normal(size=(5, 4)), np.zeros((5, 2))

    def _loss():
        return _mse(net, (x, y))[0]

    _, tape = _mse(net, (x, y))
    assert np.abs(tape.weights[0]).max() < 1e-6
    assert max_relative_error([net.layers[0].weight], [tape.weights[0]], _loss) < 1e-4
    assert max_relative_error([net.layers[0].weight], [1.01 * tape.weights[0]], _loss) > 1e-4


# ── Losses ────────────────────────────────────────────────

def test_xent_of_uniform_logits_is_log_classes():
    loss, grad = loss_xent(np.zeros((4, 10)), [0, 1, 2, 3])
    assert loss == pytest.approx(math.log(10))
    np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)


def test_soft_xent_with_one_hot_equals_xent(rng):
    logits = rng.normal(size=(5, 3))
    labels = np.array([0, 2, 1, 1, 0])
    hard, g_hard = loss_xent(logits, labels)
    soft, g_soft = loss_soft_xent(logits, np.eye(3)[labels])
    assert soft == pytest.approx(hard)
    np.testing.assert_allclose(g_soft, g_hard, atol=1e-14)


def test_xent_rejects_out_of_range_labels():
    with pytest.raises(DimensionError):
        loss_xent(np.zeros((2, 3)), [0, 3])


def test_mse_gradient_includes_mean_factor():
    loss, grad = loss_mse(np.array([[1.0, 3.0]]), np.array([[0.0, 0.0]]))
    assert loss == pytest.approx(5.0)
    np.testing.assert_allclose(grad, [[1.0, 3.0]])


def test_entropy_of_uniform_is_maximal():
    assert entropy(np.zeros((1, 10)))[0] == pytest.approx(math.log(10))


# ── Optimizers ────────────────────────────────────────────

def test_sgd_step_is_exact(small_net):
    before = small_net.copy()
    tape = GradTape.zeros_like(small_net)
    tape.weights[0][:] = 1.0
    step(Optimizer(kind="sgd", learning_rate=0.5), small_net, tape)
    np.testing.assert_allclose(small_net.layers[0].weight, before.layers[0].weight - 0.5)
    assert np.array_equal(small_net.layers[1].weight, before.layers[1].weight)
    assert small_net.version == 1


def test_first_adam_step_moves_by_learning_rate(small_net):
    before = small_net.copy()
    tape = GradTape.zeros_like(small_net)
    tape.weights[2][:] = -3.0
    step(Optimizer(kind="adam", learning_rate=0.01), small_net, tape)
    np.testing.assert_allclose(small_net.layers[2].weight - before.layers[2].weight, 0.01, rtol=1e-6)


def test_non_finite_gradient_names_layer(small_net):
    tape = GradTape.zeros_like(small_net)
    tape.biases[1][0] = np.nan
    with pytest.raises(DivergenceError) as exc:
        step(Optimizer(), small_net, tape)
    assert exc.value.layer_index == 1


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        Optimizer(kind="rmsprop")
