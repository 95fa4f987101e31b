import numpy as np
import pytest

from kobs.observables import (MLP, NetworkShape, analytical_dictionary, graded_lex_monomials,
                              make_dictionary, make_network, map_from_descriptor)


def fd_jacobian(f, x, h=1e-5):
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


def test_polynomial_degree2_enumeration():
    obs = make_dictionary(2, degree=2)
    assert obs.lifted_dim == 6
    assert obs.labels() == ["x1", "x2", "x1^2", "x1*x2", "x2^2", "1"]


def test_degree4_contains_analytical_observables():
    mons = graded_lex_monomials(2, 4)
    for m in [(0, 2), (4, 0), (2, 1)]:
        assert m in mons


def test_zero_column_lifts_to_bias_only():
    psi = make_dictionary(3, degree=3).evaluate(np.zeros(3))
    assert psi[-1] == 1.0
    assert not np.any(psi[:-1])


def test_analytical_dictionary_by_hand():
    psi = analytical_dictionary().evaluate(np.array([2.0, 3.0]))
    # (x1, x2, x1^2, x2^2, x1^4, x1^2 x2, 1)
    np.testing.assert_array_equal(psi, [2, 3, 4, 9, 16, 12, 1])


def test_monomial_gradient_by_hand():
    J = analytical_dictionary().jacobian(np.array([2.0, 3.0]))
    np.testing.assert_array_equal(J[5], [12.0, 4.0])
    np.testing.assert_array_equal(J[-1], [0.0, 0.0])


def test_rbf_at_its_center():
    obs = make_dictionary(2, centers=[[0.5, -1.0]], sigma=0.7)
    assert obs.evaluate(np.array([0.5, -1.0]))[2] == pytest.approx(1.0)


def test_network_shape_arithmetic_and_seed():
    shape = NetworkShape((2, 16, 16, 5))
    a, b = make_network(shape), make_network(shape)
    assert a.lifted_dim == 8
    np.testing.assert_array_equal(a.parameters, b.parameters)
    x = np.random.default_rng(0).normal(size=(2, 4))
    np.testing.assert_array_equal(a.evaluate(x), a.evaluate(x))


def test_zero_weights_give_constant_phi():
    net = make_network(NetworkShape((2, 4, 3)))
    net = net.with_parameters(np.zeros_like(net.parameters))
    X = np.random.default_rng(1).normal(size=(2, 5))
    P = net.evaluate(X)
    np.testing.assert_array_equal(P[:2], X)
    assert not np.any(P[2:5])
    assert np.all(P[5] == 1.0)


def test_shape_needs_hidden_layer():
    with pytest.raises(ValueError):
        NetworkShape((2, 3))


@pytest.mark.parametrize("activation", ["elu", "tanh"])
def test_network_jacobian_matches_finite_differences(activation):
    net = make_network(NetworkShape((3, 8, 8, 4), activation, init_seed=2))
    X = np.random.default_rng(3).normal(size=(3, 50))
    J = net.jacobians(X)
    for k in range(50):
        fd = fd_jacobian(net.evaluate, X[:, k])
        assert np.max(np.abs(J[k] - fd)) < 1e-6


def test_dictionary_jacobian_matches_finite_differences():
    obs = make_dictionary(2, degree=4, centers=[[0.0, 0.0], [1.0, -1.0]])
    X = np.random.default_rng(4).uniform(-1, 1, size=(2, 50))
    J = obs.jacobians(X)
    for k in range(50):
        assert np.max(np.abs(J[k] - fd_jacobian(obs.evaluate, X[:, k]))) < 1e-6


def test_backprop_zero_upstream():
    net = make_network(NetworkShape((2, 5, 3)))
    X = np.ones((2, 4))
    assert not np.any(net.backprop(X, np.zeros((net.lifted_dim, 4))))


def test_backprop_matches_finite_differences():
    net = make_network(NetworkShape((2, 6, 3), "tanh", init_seed=5))
    rng = np.random.default_rng(6)
    X = rng.normal(size=(2, 7))
    U = rng.normal(size=(net.lifted_dim, 7))
    g = net.backprop(X, U)
    p0 = net.parameters
    fd = np.empty_like(p0)
    for i in range(p0.size):
        e = np.zeros_like(p0)
        e[i] = 1e-6
        fd[i] = (np.sum(U * net.with_parameters(p0 + e).evaluate(X))
                 - np.sum(U * net.with_parameters(p0 - e).evaluate(X))) / 2e-6
    assert np.max(np.abs(g - fd)) < 1e-6


def test_linear_layer_gradient_closed_form():
    mlp = MLP((3, 2))
    rng = np.random.default_rng(7)
    X, U = rng.normal(size=(3, 5)), rng.normal(size=(2, 5))
    g, gin = mlp.backward(X, U)
    W, _ = mlp.layers()[0]
    np.testing.assert_allclose(g[:6].reshape(2, 3), U @ X.T, atol=1e-13)
    np.testing.assert_allclose(g[6:], U.sum(axis=1), atol=1e-13)
    np.testing.assert_allclose(gin, W.T @ U, atol=1e-13)


def test_dictionary_has_no_parameters():
    with pytest.raises(TypeError, match="no trainable parameters"):
        analytical_dictionary().backprop(np.ones((2, 1)), np.ones((7, 1)))


def test_descriptor_roundtrip():
    for obs in (analytical_dictionary(), make_network(NetworkShape((2, 4, 3)))):
        back = map_from_descriptor(obs.descriptor())
        X = np.random.default_rng(8).normal(size=(2, 3))
        np.testing.assert_array_equal(back.evaluate(X), obs.evaluate(X))
