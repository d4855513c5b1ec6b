"""Tests for the dense network kernel."""

import math

import numpy as np
import pytest

from gradient_standin.classes import Layer
from gradient_standin.nn import (
    MlpSpec,
    batch_loss_and_grad,
    central_difference,
    finite_diff_gradient,
    flatten,
    forward,
    init_params,
    loss,
    loss_and_grad,
    per_example_grads,
    sgd_step,
    unflatten_like,
    zeros_like,
)


def max_relative_error(estimate, exact) -> float:
    estimate, exact = flatten(estimate), flatten(exact)
    return float(np.max(np.abs(estimate - exact)) / np.max(np.abs(exact)))


def naive_probabilities(spec, params, x):
    hidden = list(x)
    for index, layer in enumerate(params):
        out = []
        for row in range(layer.weight.shape[0]):
            total = layer.bias[row]
            for col in range(layer.weight.shape[1]):
                total += layer.weight[row, col] * hidden[col]
            out.append(total)
        if index < len(params) - 1:
            out = [math.tanh(value) for value in out]
        hidden = out
    top = max(hidden)
    exps = [math.exp(value - top) for value in hidden]
    return np.array([value / sum(exps) for value in exps])


def test_spec_validation():
    with pytest.raises(ValueError, match="at least an input"):
        MlpSpec((4,))
    with pytest.raises(ValueError, match=">= 1"):
        MlpSpec((4, 0, 2))
    with pytest.raises(ValueError, match="Activation must be one of"):
        MlpSpec((4, 2), "softplus")


def test_init_zero_biases_and_determinism():
    spec = MlpSpec((2, 2))
    first, second = init_params(spec, 11), init_params(spec, 11)
    np.testing.assert_array_equal(first[0].bias, [0.0, 0.0])
    np.testing.assert_array_equal(first[0].weight, second[0].weight)


def test_init_weight_bound():
    params = init_params(MlpSpec((64, 32, 10)), 7)
    assert np.all(np.abs(params[0].weight) <= np.sqrt(6 / 96))
    assert params[0].weight.shape == (32, 64)


def test_forward_zero_params_is_uniform():
    spec = MlpSpec((3, 5, 4))
    trace = forward(spec, zeros_like(init_params(spec, 0)), np.array([1.0, -2.0, 0.5]))
    np.testing.assert_allclose(trace.probabilities, np.full(4, 0.25), atol=1e-15)


def test_forward_identity_layer():
    spec = MlpSpec((2, 2))
    params = (Layer(weight=np.eye(2), bias=np.zeros(2)),)
    trace = forward(spec, params, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(trace.logits, [1.0, 0.0])
    np.testing.assert_array_equal(trace.activations[0], [1.0, 0.0])


def test_forward_matches_naive_implementation(rng):
    spec = MlpSpec((4, 3, 2), "tanh")
    params = init_params(spec, 5)
    x = rng.standard_normal(4)
    trace = forward(spec, params, x)
    np.testing.assert_allclose(trace.probabilities, naive_probabilities(spec, params, x), atol=1e-12)
    assert trace.probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_forward_shape_mismatch(small_spec, small_params):
    with pytest.raises(ValueError, match="does not match input dimension"):
        forward(small_spec, small_params, np.ones(5))
    with pytest.raises(ValueError, match="Expected 2 layers"):
        forward(small_spec, small_params[:1], np.ones(4))


def test_loss_at_uniform_state():
    spec = MlpSpec((3, 5))
    value, _, _ = loss_and_grad(spec, zeros_like(init_params(spec, 0)), np.ones(3), 2)
    assert value == pytest.approx(np.log(5))


def test_last_bias_gradient_is_p_minus_onehot(small_spec, small_params, rng):
    x = rng.standard_normal(4)
    _, grads, trace = loss_and_grad(small_spec, small_params, x, 1)
    expected = trace.probabilities - np.array([0.0, 1.0])
    np.testing.assert_allclose(grads[-1].bias, expected, atol=1e-15)
    assert abs(grads[-1].bias.sum()) <= 1e-12


def test_invalid_label(small_spec, small_params):
    with pytest.raises(ValueError, match="Labels must lie in"):
        loss_and_grad(small_spec, small_params, np.ones(4), 2)


@pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
def test_backprop_matches_finite_differences(activation):
    rng = np.random.default_rng(99)
    for _ in range(50):
        sizes = (int(rng.integers(2, 5)), int(rng.integers(2, 5)), int(rng.integers(2, 4)))
        spec = MlpSpec(sizes, activation)
        params = init_params(spec, int(rng.integers(1000)))
        x = rng.standard_normal(sizes[0])
        label = int(rng.integers(sizes[-1]))
        _, grads, _ = loss_and_grad(spec, params, x, label)
        numeric = finite_diff_gradient(spec, params, x, label, h=1e-5)
        assert max_relative_error(numeric, grads) < 1e-6


def test_relu_backprop_away_from_kinks(rng):
    spec = MlpSpec((5, 6, 3), "relu")
    params = init_params(spec, 2)
    x = rng.standard_normal(5)
    trace = forward(spec, params, x)
    assert np.min(np.abs(trace.pre_activations[0])) > 1e-3
    _, grads, _ = loss_and_grad(spec, params, x, 0)
    assert max_relative_error(finite_diff_gradient(spec, params, x, 0), grads) < 1e-6


def test_central_difference_on_quadratic(rng):
    a = rng.standard_normal((5, 5))
    a = a @ a.T
    b = rng.standard_normal(5)
    theta = rng.standard_normal(5)
    numeric = central_difference(lambda t: 0.5 * t @ a @ t + b @ t, theta, 1e-5)
    np.testing.assert_allclose(numeric, a @ theta + b, atol=1e-8)


def test_finite_diff_zero_input_gives_zero_weight_gradients():
    spec = MlpSpec((3, 4, 2), "tanh")
    params = init_params(spec, 8)
    numeric = finite_diff_gradient(spec, params, np.zeros(3), 0)
    for layer in numeric:
        assert np.max(np.abs(layer.weight)) < 1e-10


def test_finite_diff_error_is_second_order():
    spec = MlpSpec((4, 3, 2), "tanh")
    params = tuple(Layer(3 * p.weight, p.bias + 0.3) for p in init_params(spec, 4))
    x = np.array([0.4, -0.7, 1.1, 0.2])
    _, exact, _ = loss_and_grad(spec, params, x, 1)
    coarse = np.max(np.abs(flatten(finite_diff_gradient(spec, params, x, 1, h=1e-4)) - flatten(exact)))
    fine = np.max(np.abs(flatten(finite_diff_gradient(spec, params, x, 1, h=5e-5)) - flatten(exact)))
    assert 3.0 < coarse / fine < 5.0


def test_finite_diff_rejects_nonpositive_step(small_spec, small_params):
    with pytest.raises(ValueError, match="must be > 0"):
        finite_diff_gradient(small_spec, small_params, np.ones(4), 0, h=0.0)


def test_sgd_step_arithmetic():
    params = (Layer(weight=np.array([[1.0]]), bias=np.array([1.0])),)
    grads = (Layer(weight=np.array([[2.0]]), bias=np.array([2.0])),)
    stepped = sgd_step(params, grads, 0.5)
    np.testing.assert_array_equal(stepped[0].weight, [[0.0]])
    unchanged = sgd_step(params, grads, 0.0)
    np.testing.assert_array_equal(unchanged[0].bias, [1.0])


def test_sgd_step_errors(small_params):
    with pytest.raises(ValueError, match=">= 0"):
        sgd_step(small_params, small_params, -0.1)
    with pytest.raises(ValueError, match="Layer count mismatch"):
        sgd_step(small_params, small_params[:1], 0.1)


def test_sgd_decreases_convex_loss(rng):
    spec = MlpSpec((3, 3))
    params = init_params(spec, 1)
    inputs = rng.standard_normal((20, 3))
    labels = rng.integers(3, size=20)
    previous = np.inf
    for _ in range(30):
        value, grads = batch_loss_and_grad(spec, params, inputs, labels)
        assert value < previous
        previous = value
        params = sgd_step(params, grads, 0.1)


def test_per_example_grads_match_single_calls(small_spec, small_params, rng):
    inputs = rng.standard_normal((3, 4))
    labels = np.array([0, 1, 1])
    losses, grads = per_example_grads(small_spec, small_params, inputs, labels)
    for row in range(3):
        value, single, _ = loss_and_grad(small_spec, small_params, inputs[row], labels[row])
        assert losses[row] == pytest.approx(value, rel=1e-14)
        assert loss(small_spec, small_params, inputs[row], labels[row]) == pytest.approx(value)
        np.testing.assert_allclose(grads[0].weight[row], single[0].weight, atol=1e-12)


def test_flatten_layout(small_params):
    flat = flatten(small_params)
    assert flat.size == 4 * 3 + 3 + 3 * 2 + 2
    np.testing.assert_array_equal(flat[:12], small_params[0].weight.ravel())
    rebuilt = unflatten_like(flat, small_params)
    np.testing.assert_array_equal(rebuilt[1].bias, small_params[1].bias)
    with pytest.raises(ValueError, match="expected"):
        unflatten_like(flat[:-1], small_params)
