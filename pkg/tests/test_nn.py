import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intactvae.nn import (
    AdamState,
    Mlp,
    adam_step,
    dump_params,
    grad_check,
    load_params,
    mlp_backward,
    mlp_forward,
    record_length,
)


def single_layer(act, w, b):
    net = Mlp([len(b), len(b)], act, seed=0)
    net.weights[0][:] = w
    net.biases[0][:] = b
    return net


def test_identity_network_passes_input_through():
    net = single_layer("identity", np.eye(2), [0.0, 0.0])
    np.testing.assert_array_equal(mlp_forward(net, [1.0, 2.0]), [1.0, 2.0])


def test_relu_clamps_negative_preactivation():
    net = single_layer("relu", np.eye(2), [-3.0, 0.0])
    net.activate_output = True
    np.testing.assert_array_equal(mlp_forward(net, [1.0, 2.0]), [0.0, 2.0])


def test_seeded_two_layer_net_matches_hand_trace():
    net = Mlp([2, 4, 1], "relu", seed=11)
    x = np.array([0.5, -0.5])
    w0, b0, w1, b1 = (p.copy() for p in net.params())
    hidden = [max(0.0, x[0] * w0[0, j] + x[1] * w0[1, j] + b0[j]) for j in range(4)]
    expected = sum(hidden[j] * w1[j, 0] for j in range(4)) + b1[0]
    assert mlp_forward(net, x)[0] == pytest.approx(expected, rel=1e-14)


def test_forward_rejects_wrong_input_width():
    net = Mlp([3, 2], seed=0)
    with pytest.raises(ValueError, match="3"):
        mlp_forward(net, np.ones(4))


def test_forward_does_not_mutate_parameters():
    net = Mlp([3, 5, 2], seed=1)
    before = [p.copy() for p in net.params()]
    mlp_forward(net, np.ones((4, 3)))
    for a, b in zip(before, net.params()):
        np.testing.assert_array_equal(a, b)


def test_equal_seeds_give_identical_parameters():
    a, b = Mlp([3, 7, 2], "relu", seed=42), Mlp([3, 7, 2], "relu", seed=42)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    c = Mlp([3, 7, 2], "relu", seed=43)
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_glorot_uniform_bounds_and_zero_biases():
    net = Mlp([200, 200, 1], seed=0)
    for w in net.weights:
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.all(np.abs(w) <= limit)
        assert np.abs(w).max() > 0.9 * limit
    for b in net.biases:
        assert not b.any()


@pytest.mark.parametrize("sizes", [[1, 5, 3], [4, 2], [2, 8, 8, 6]])
def test_output_dimension_matches_last_layer(sizes):
    net = Mlp(sizes, seed=3)
    assert mlp_forward(net, np.zeros(sizes[0])).shape == (sizes[-1],)
    assert mlp_forward(net, np.zeros((5, sizes[0]))).shape == (5, sizes[-1])


def test_backward_of_identity_scalar_layer():
    net = single_layer("identity", [[1.0]], [0.0])
    grads, gin = mlp_backward(net, [3.0], [1.0])
    assert grads[0][0, 0] == 3.0
    assert grads[1][0] == 1.0
    assert gin[0] == 1.0


def test_zero_cotangent_gives_zero_gradients():
    net = Mlp([3, 6, 2], "invertible_smooth", seed=5)
    grads, gin = mlp_backward(net, np.ones((4, 3)), np.zeros((4, 2)))
    assert all(not g.any() for g in grads) and not gin.any()


@pytest.mark.parametrize("act", ["relu", "identity", "invertible_smooth"])
@pytest.mark.parametrize("positive", [False, True])
def test_gradients_match_finite_differences(act, positive):
    rng = np.random.default_rng(7)
    net = Mlp([3, 6, 4, 2], act, seed=9, positive_weights=positive)
    # nonzero biases keep relu units off their kinks
    for b in net.biases:
        b[:] = rng.uniform(-0.5, 0.5, b.shape)
    rep = grad_check(net, rng.standard_normal((5, 3)), 1e-4, step=1e-5)
    assert rep.passed, rep


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    net = Mlp([3, 5, 1], "invertible_smooth", seed=2)
    x = rng.standard_normal(3)
    _, gin = mlp_backward(net, x, [1.0])
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1e-6
        num = (mlp_forward(net, x + e)[0] - mlp_forward(net, x - e)[0]) / 2e-6
        assert gin[i] == pytest.approx(num, rel=1e-6)


def test_grad_check_identity_net_is_exact():
    net = single_layer("identity", np.eye(2), [0.0, 0.0])
    rep = grad_check(net, np.array([[0.5, 2.0]]), 1e-4, step=0.5)
    assert rep.passed and rep.worst_relative_error < 1e-12


def test_grad_check_relu_net_away_from_kinks():
    net = Mlp([3, 8, 1], "relu", seed=123)
    x = np.random.default_rng(1).standard_normal((4, 3))
    assert grad_check(net, x, 1e-4).passed


def test_grad_check_flags_corrupted_gradient():
    net = Mlp([3, 8, 1], "relu", seed=123)
    x = np.random.default_rng(1).standard_normal((4, 3))
    c = np.random.default_rng(0).standard_normal((4, 1))
    grads, _ = mlp_backward(net, x, c)
    grads[0][1, 2] += 1.0
    rep = grad_check(net, x, 1e-4, grads=grads, seed=0)
    assert not rep.passed
    assert rep.worst_param == 0 and rep.worst_index == (1, 2)


def test_grad_check_rejects_nonpositive_tolerance():
    with pytest.raises(ValueError):
        grad_check(Mlp([1, 1], seed=0), np.ones((1, 1)), 0.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), lo=st.floats(-50, 0), width=st.floats(0.1, 50))
def test_positive_invertible_smooth_scalar_map_is_increasing(seed, lo, width):
    net = Mlp([1, 8, 8, 1], "invertible_smooth", seed=seed, positive_weights=True)
    rng = np.random.default_rng(seed)
    for b in net.biases:
        b[:] = rng.uniform(-1, 1, b.shape)
    grid = np.linspace(lo, lo + width, 400)[:, None]
    assert np.all(np.diff(net.forward(grid)[:, 0]) > 0)


def test_adam_zero_gradient_is_identity_and_counts_steps():
    params = [np.array([1.0, -2.0]), np.array([[0.5]])]
    before = [p.copy() for p in params]
    st_ = AdamState.for_params(params)
    for k in range(5):
        adam_step(st_, params, [np.zeros(2), np.zeros((1, 1))])
        assert st_.step_count == k + 1
    for a, b in zip(before, params):
        np.testing.assert_array_equal(a, b)


def test_adam_accumulators_start_at_zero():
    s = AdamState.for_params([np.ones(3)])
    assert s.step_count == 0
    assert not s.first_moment[0].any() and not s.second_moment[0].any()


@pytest.mark.parametrize("g", [3.0, -0.01, 1e3])
def test_adam_first_step_moves_by_learning_rate(g):
    p = [np.array([0.0])]
    s = AdamState.for_params(p, learning_rate=1e-4)
    adam_step(s, p, [np.array([g])])
    # bias-corrected moments give m/sqrt(v) = sign(g)
    assert p[0][0] == pytest.approx(-1e-4 * np.sign(g), rel=1e-6)


def test_adam_trajectories_are_reproducible():
    def run():
        rng = np.random.default_rng(3)
        p = [rng.standard_normal((3, 2))]
        s = AdamState.for_params(p, learning_rate=1e-2)
        grng = np.random.default_rng(4)
        for _ in range(100):
            adam_step(s, p, [grng.standard_normal((3, 2))])
        return p[0]

    np.testing.assert_array_equal(run(), run())


def test_adam_rejects_shape_mismatch_and_nonfinite_gradients():
    p = [np.zeros(2)]
    s = AdamState.for_params(p)
    with pytest.raises(ValueError):
        adam_step(s, p, [np.zeros(3)])
    with pytest.raises(FloatingPointError):
        adam_step(s, p, [np.array([0.0, np.nan])])


def test_parameter_record_round_trip_is_exact():
    net = Mlp([3, 4, 2], "invertible_smooth", seed=8, positive_weights=True)
    text = dump_params(net)
    lines = text.splitlines()
    assert len(lines) == record_length(net) == 2 + 2 * net.n_layers
    back = load_params(lines)
    assert back.activation == net.activation and back.positive_weights
    x = np.random.default_rng(0).standard_normal((6, 3))
    np.testing.assert_array_equal(back.forward(x), net.forward(x))
