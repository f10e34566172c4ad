import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infovaegan import tensor as T
from infovaegan.nn import AdamState, DenseLayer, Mlp, adam_step, init_mlp, mlp_forward
from infovaegan.tensor import ContractError, Graph, ShapeError


def test_init_is_deterministic():
    a = init_mlp([4, 8, 2], rng=np.random.default_rng(7))
    b = init_mlp([4, 8, 2], rng=np.random.default_rng(7))
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)


def test_biases_start_at_zero():
    net = init_mlp([5, 7, 3, 2], rng=np.random.default_rng(0))
    assert all(np.all(layer.bias == 0) for layer in net.layers)


def test_glorot_bounds_and_mean():
    net = init_mlp([100, 100], rng=np.random.default_rng(0))
    w = net.layers[0].weights
    bound = np.sqrt(6.0 / 200)
    assert np.all(np.abs(w) <= bound)
    # 10^4 weights here; mean of U(-b, b) has std b / sqrt(3 n)
    assert abs(w.mean()) < 3 * (bound / np.sqrt(3)) / np.sqrt(w.size)


def test_glorot_mean_over_1e5_draws():
    rng = np.random.default_rng(1)
    draws = np.concatenate([init_mlp([100, 100], rng=rng).layers[0].weights.ravel() for _ in range(10)])
    bound = np.sqrt(6.0 / 200)
    assert abs(draws.mean()) < 3 * (bound / np.sqrt(3)) / np.sqrt(draws.size)


@pytest.mark.parametrize("extents", [[], [4], [4, 0, 2], [3, -1]])
def test_bad_extents(extents):
    with pytest.raises(ContractError):
        init_mlp(extents)


def test_sigmoid_head_on_zeros():
    net = init_mlp([6, 4, 3], "sigmoid", np.random.default_rng(0))
    net.set_parameters([np.zeros_like(p) for p in net.parameters()])
    out = mlp_forward(net, np.zeros((5, 6))).value
    np.testing.assert_array_equal(out, np.full((5, 3), 0.5))


def test_output_shape():
    net = init_mlp([1024, 256, 256, 10], rng=np.random.default_rng(0))
    assert mlp_forward(net, np.zeros((64, 1024))).shape == (64, 10)


def test_identity_layer():
    net = Mlp([DenseLayer(np.eye(4), np.zeros(4))])
    x = np.random.default_rng(0).normal(size=(3, 4))
    np.testing.assert_array_equal(mlp_forward(net, x).value, x)


def test_split_head():
    net = init_mlp([4, 8, 5], "split", np.random.default_rng(0), splits=(3, 2))
    x = np.random.default_rng(1).normal(size=(2, 4))
    a, b = net(x)
    full = Mlp(net.layers, "none")(x).value
    np.testing.assert_array_equal(a.value, full[:, :3])
    np.testing.assert_array_equal(b.value, full[:, 3:])


def test_split_must_cover_outputs():
    with pytest.raises(ShapeError):
        init_mlp([4, 5], "split", splits=(3, 1))


def test_extent_mismatch_names_layer():
    net = init_mlp([4, 8, 2])
    with pytest.raises(ShapeError, match="layer 0"):
        mlp_forward(net, np.zeros((3, 5)))


def test_layer_chain_is_checked():
    with pytest.raises(ShapeError, match="layer 1"):
        Mlp([DenseLayer(np.zeros((3, 4)), np.zeros(4)), DenseLayer(np.zeros((5, 2)), np.zeros(2))])


def test_bound_parameters_receive_gradients():
    net = init_mlp([3, 4, 1], rng=np.random.default_rng(2))
    g = Graph()
    params = net.bind(g)
    loss = T.mean(net(np.ones((2, 3)), params))
    grads = T.backward(loss, params).arrays(params)
    assert [x.shape for x in grads] == [p.shape for p in net.parameters()]


@settings(max_examples=20, deadline=None)
@given(st.permutations(list(range(6))))
def test_batch_order_equivariance(perm):
    net = init_mlp([5, 7, 3], "sigmoid", np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 5))
    out = mlp_forward(net, x).value
    np.testing.assert_allclose(mlp_forward(net, x[perm]).value, out[perm], rtol=1e-12, atol=1e-15)


def test_copy_is_deep():
    net = init_mlp([3, 2])
    clone = net.copy()
    clone.layers[0].weights[0, 0] += 1.0
    assert net.layers[0].weights[0, 0] != clone.layers[0].weights[0, 0]


# --- Adam --------------------------------------------------------------------

@pytest.mark.parametrize("g", [1e-3 * 1.01, -0.5, 3.0, -1e4])
def test_first_step_moves_by_alpha(g):
    state = AdamState.for_params([np.zeros(1)], lr=1e-4)
    (p,), state = adam_step([np.zeros(1)], [np.array([g])], state)
    assert abs(abs(p[0]) - 1e-4) < 1e-6
    assert np.sign(p[0]) == -np.sign(g)
    assert state.t == 1


def test_first_step_direction_is_sign_of_gradient():
    rng = np.random.default_rng(0)
    g = rng.normal(size=(4, 5))
    params = [rng.normal(size=(4, 5))]
    state = AdamState.for_params(params, lr=0.01)
    (new,), _ = adam_step(params, [g], state)
    np.testing.assert_allclose(new - params[0], -0.01 * np.sign(g), rtol=1e-6)


def test_zero_gradient_keeps_parameters():
    params = [np.arange(4.0)]
    state = AdamState.for_params(params)
    for _ in range(50):
        params, state = adam_step(params, [np.zeros(4)], state)
    np.testing.assert_array_equal(params[0], np.arange(4.0))
    assert state.t == 50


def test_convex_scalar_problem():
    w = [np.zeros(1)]
    state = AdamState.for_params(w, lr=0.1)
    for _ in range(200):
        w, state = adam_step(w, [2 * (w[0] - 3.0)], state)
    assert abs(w[0][0] - 3.0) < 0.1


def test_matches_textbook_update():
    rng = np.random.default_rng(4)
    p = rng.normal(size=7)
    m, v = np.zeros(7), np.zeros(7)
    state = AdamState.for_params([p], lr=0.01, beta1=0.5, beta2=0.9)
    params = [p.copy()]
    for t in range(1, 6):
        g = rng.normal(size=7)
        m = 0.5 * m + 0.5 * g
        v = 0.9 * v + 0.1 * g * g
        p = p - 0.01 * (m / (1 - 0.5**t)) / (np.sqrt(v / (1 - 0.9**t)) + 1e-8)
        params, state = adam_step(params, [g], state)
        np.testing.assert_allclose(params[0], p, rtol=1e-12, atol=1e-15)


def test_inputs_are_not_mutated():
    p = np.ones(3)
    state = AdamState.for_params([p])
    adam_step([p], [np.ones(3)], state)
    np.testing.assert_array_equal(p, np.ones(3))
    assert state.t == 0 and np.all(state.m[0] == 0)


def test_shape_mismatch():
    state = AdamState.for_params([np.zeros(3)])
    with pytest.raises(ContractError):
        adam_step([np.zeros(3)], [np.zeros(4)], state)
    with pytest.raises(ContractError):
        adam_step([np.zeros(3)], [], state)
