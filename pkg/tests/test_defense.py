"""Tests for the gradient stand-in, its derivative analysis and the baseline transforms."""

import numpy as np
import pytest

import gradient_standin.defense as defense
from gradient_standin.attacks import rank1_residual
from gradient_standin.classes import Layer
from gradient_standin.defense import (
    MomentState,
    TransformKind,
    apply_transform,
    approx_standin_jacobian,
    approximation_alpha,
    clip_transform,
    compress_transform,
    exact_standin_jacobian,
    finite_difference_jacobian,
    noise_transform,
    standin_preview,
    standin_update,
)
from gradient_standin.nn import loss_and_grad


def test_default_constants():
    assert defense.get_moment_constants() == {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8}


def test_set_and_reset_constants():
    defense.set_moment_constants(beta1=0.5, beta2=0.99, eps=1e-6)
    state = MomentState.fresh(3)
    assert (state.beta1, state.beta2, state.eps) == (0.5, 0.99, 1e-6)
    defense.reset_moment_constants()
    assert MomentState.fresh(3).beta1 == 0.9


@pytest.mark.parametrize(
    "beta1, beta2, eps",
    [(1.0, 0.999, 1e-8), (0.9, -0.1, 1e-8), (0.9, 0.999, 0.0)],
)
def test_invalid_constants(beta1, beta2, eps):
    with pytest.raises(ValueError):
        defense.set_moment_constants(beta1=beta1, beta2=beta2, eps=eps)


def test_moment_state_validation():
    with pytest.raises(ValueError, match="differ in size"):
        MomentState(m=np.zeros(2), v=np.zeros(3))
    with pytest.raises(ValueError, match=">= 0"):
        MomentState(m=np.zeros(2), v=np.array([0.0, -1.0]))


def test_scalar_stream_first_round():
    state = MomentState.fresh(1)
    out = standin_update(state, np.array([1.0]))
    assert state.r == 1
    assert state.m[0] == pytest.approx(0.1)
    assert state.v[0] == pytest.approx(0.001)
    assert out[0] == pytest.approx(1.0 / (1.0 + 1e-8), rel=1e-12)


def test_zero_gradient_gives_zero():
    out = standin_update(MomentState.fresh(4), np.zeros(4))
    np.testing.assert_array_equal(out, np.zeros(4))


def test_constant_stream_is_a_fixed_point():
    c = np.array([0.7, -3.0, 1e-3])
    state = MomentState.fresh(3)
    for _ in range(60):
        np.testing.assert_allclose(standin_update(state, c), c / (np.abs(c) + 1e-8), rtol=1e-12)


def test_round_one_is_sign_normalization(rng):
    g = rng.choice([-1.0, 1.0], size=100) * rng.uniform(0.1, 2.0, size=100)
    np.testing.assert_allclose(standin_preview(MomentState.fresh(100), g), np.sign(g), atol=1e-6)
    doubled = standin_preview(MomentState.fresh(100), 2 * g)
    assert np.max(np.abs(doubled - standin_preview(MomentState.fresh(100), g))) < 1e-6


def test_preview_leaves_state_untouched(rng):
    state = MomentState.fresh(5).warm_up(rng.standard_normal((3, 5)))
    before = state.copy()
    standin_preview(state, rng.standard_normal(5))
    np.testing.assert_array_equal(state.m, before.m)
    assert state.r == 3


def test_layout_is_preserved(small_spec, small_params):
    _, grads, _ = loss_and_grad(small_spec, small_params, np.ones(4), 0)
    out = standin_update(MomentState.fresh(grads), grads)
    assert isinstance(out[0], Layer)
    assert out[0].weight.shape == (3, 4)


def test_size_mismatch():
    with pytest.raises(ValueError, match="Expected 4 gradient coordinates"):
        standin_update(MomentState.fresh(4), np.ones(5))


def test_exact_jacobian_fresh_scalar():
    state = MomentState.fresh(1)
    g = np.array([1.0])
    exact = exact_standin_jacobian(state, g)
    assert exact[0] == pytest.approx(1e-8 / (1 + 1e-8) ** 2, rel=1e-6)
    numeric = finite_difference_jacobian(state, g, step=1e-4)
    assert abs(numeric[0] - exact[0]) < 1e-10
    assert state.r == 0


def test_exact_jacobian_at_zero_gradient():
    state = MomentState.fresh(1)
    exact = exact_standin_jacobian(state, np.array([0.0]))
    assert exact[0] == pytest.approx(1e8)
    numeric = finite_difference_jacobian(state, np.array([0.0]), step=1e-14)
    assert numeric[0] == pytest.approx(exact[0], rel=1e-5)


def test_exact_jacobian_matches_finite_differences(rng):
    state = MomentState.fresh(200).warm_up(rng.standard_normal((7, 200)))
    g = rng.choice([-1.0, 1.0], size=200) * rng.uniform(0.1, 2.0, size=200)
    exact = exact_standin_jacobian(state, g)
    numeric = finite_difference_jacobian(state, g)
    error = np.abs(numeric - exact) / np.maximum(np.abs(exact), 1e-3)
    assert error.max() < 1e-5


def test_exact_jacobian_vanished_second_moment():
    with pytest.raises(RuntimeError, match="Second moment vanished"):
        exact_standin_jacobian(MomentState.fresh(1), np.array([1e-170]))


def test_approximation_zero_history():
    g = np.array([0.5, -2.0])
    approx = approx_standin_jacobian(MomentState.fresh(2), g, alpha=1.0)
    np.testing.assert_array_equal(np.abs(approx), [0.0, 0.0])


def test_approximation_undefined_at_zero_gradient():
    state = MomentState(m=np.array([0.3, 0.3]), v=np.array([0.1, 0.1]), r=5)
    approx = approx_standin_jacobian(state, np.array([0.0, 1.0]), alpha=1.2)
    assert np.isnan(approx[0])
    assert approx[1] == pytest.approx(-0.9 * 0.3 / (1.2 * (1 - 0.9**6)))


def test_approximation_rejects_bad_alpha():
    with pytest.raises(ValueError, match="alpha must be > 0"):
        approx_standin_jacobian(MomentState.fresh(1), np.ones(1), alpha=0.0)


def test_approximation_tracks_exact_when_gradient_dominates(rng):
    signs = rng.choice([-1.0, 1.0], size=64)
    state = MomentState.fresh(64).warm_up(
        signs * 1e-4 * rng.uniform(0.5, 1.5, size=64) for _ in range(200)
    )
    g = signs * rng.uniform(0.5, 2.0, size=64)
    approx = approx_standin_jacobian(state, g, approximation_alpha(state, g))
    exact = exact_standin_jacobian(state, g)
    assert np.all(np.sign(approx) == np.sign(exact))
    assert np.max(np.abs(approx - exact) / np.abs(exact)) < 0.15


def test_alpha_values(rng):
    g = rng.uniform(0.5, 2.0, size=100)
    assert approximation_alpha(MomentState.fresh(100), g) == pytest.approx(1.0, abs=1e-7)
    stationary = MomentState(m=g.copy(), v=g * g, r=999)
    assert approximation_alpha(stationary, g) == pytest.approx(1.258, abs=0.01)
    assert approximation_alpha(stationary, g, r=10**6) == pytest.approx(1.0, abs=1e-6)


def test_alpha_errors():
    with pytest.raises(ValueError, match="every gradient coordinate is zero"):
        approximation_alpha(MomentState.fresh(3), np.zeros(3))
    with pytest.raises(ValueError, match="Round must be >= 1"):
        approximation_alpha(MomentState.fresh(3), np.ones(3), r=0)


def test_noise_transform(rng):
    g = rng.standard_normal(100_000)
    np.testing.assert_array_equal(noise_transform(g, 0.0, seed=1), g)
    noisy = noise_transform(g, 0.1, seed=5)
    assert np.var(noisy - g) == pytest.approx(0.01, rel=0.05)
    np.testing.assert_array_equal(noisy, noise_transform(g, 0.1, seed=5))
    with pytest.raises(ValueError, match="Noise scale"):
        noise_transform(g, -1.0, seed=1)


def test_clip_transform():
    np.testing.assert_allclose(clip_transform(np.array([3.0, 4.0]), 1.0), [0.6, 0.8])
    small = np.array([0.3, 0.4])
    np.testing.assert_array_equal(clip_transform(small, 1.0), small)
    with pytest.raises(ValueError, match="Clipping norm"):
        clip_transform(small, 0.0)


def test_compress_transform():
    g = np.array([0.1, -3.0, 2.0, 0.5])
    np.testing.assert_array_equal(compress_transform(g, 0.5), [0.0, -3.0, 2.0, 0.0])
    np.testing.assert_array_equal(compress_transform(g, 1.0), g)
    np.testing.assert_array_equal(compress_transform(np.ones(3), 0.3), [1.0, 0.0, 0.0])
    with pytest.raises(ValueError, match="Compression ratio"):
        compress_transform(g, 0.0)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("identity", TransformKind.identity()),
        ("standin", TransformKind.standin()),
        ("gaussian_noise(0.01)", TransformKind.gaussian_noise(0.01)),
        (" clip( 2.5 ) ", TransformKind.clip(2.5)),
        ("topk(0.1)", TransformKind.topk(0.1)),
    ],
)
def test_transform_parse(text, expected):
    kind = TransformKind.parse(text)
    assert kind == expected
    assert TransformKind.parse(kind.describe()) == kind


@pytest.mark.parametrize("text", ["adam", "clip", "standin(1)", "topk(2)", "gaussian_noise(x)"])
def test_transform_parse_errors(text):
    with pytest.raises(ValueError):
        TransformKind.parse(text)


def test_apply_transform(rng):
    g = rng.standard_normal(6)
    assert apply_transform(TransformKind.identity(), g) is g
    state = MomentState.fresh(6)
    out = apply_transform(TransformKind.standin(), g, moment=state)
    assert state.r == 1
    assert np.all(np.abs(out) < 1.0)
    with pytest.raises(ValueError, match="moment state"):
        apply_transform(TransformKind.standin(), g)
    with pytest.raises(ValueError, match="needs a seed"):
        apply_transform(TransformKind.gaussian_noise(0.1), g)
    assert np.linalg.norm(apply_transform(TransformKind.clip(0.5), g)) == pytest.approx(0.5)


def test_round_one_standin_keeps_rank_one_structure(rng):
    left, right = rng.uniform(0.1, 2.0, size=8), rng.uniform(-2.0, -0.1, size=8)
    gradient = np.outer(left, right)
    assert rank1_residual(standin_preview(MomentState.fresh(64), gradient)) < 1e-4


def test_warmed_standin_destroys_rank_one_structure(rng):
    for _ in range(10):
        state = MomentState.fresh(64).warm_up(
            np.outer(rng.standard_normal(8), rng.standard_normal(8)) for _ in range(5)
        )
        gradient = np.outer(rng.standard_normal(8), rng.standard_normal(8))
        assert rank1_residual(gradient) < 1e-8
        assert rank1_residual(standin_update(state, gradient)) > 0.1
