"""Randomized invariants; the whole module is budgeted to run well under a minute."""

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import plain_model
from kobs import decomposition, delayembed, ocdmd, simulator
from kobs.numerics import least_squares, r2_score, svd
from kobs.observables import NetworkShape, make_dictionary, make_network

FAST = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(min_side=1, max_side=7):
    return st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite))


@FAST
@given(matrices())
def test_svd_reconstructs_and_is_orthogonal(m):
    res = svd(m)
    k = min(m.shape)
    recon = res.u[:, :k] @ np.diag(res.s) @ res.v[:, :k].T
    scale = max(np.linalg.norm(m), 1e-300)
    assert np.linalg.norm(recon - m) / scale < 1e-8 or np.linalg.norm(m) == 0
    assert np.linalg.norm(res.v.T @ res.v - np.eye(m.shape[1])) < 1e-9
    assert np.linalg.norm(res.u.T @ res.u - np.eye(m.shape[0])) < 1e-9
    assert np.all(np.diff(res.s) <= 1e-12 * max(res.s.max(initial=0), 1))


@FAST
@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2))
def test_least_squares_is_a_global_minimum(seed, n, p, deficiency):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, 12))
    if deficiency and n > 1:
        A[-1] = A[0] * 2.0  # rank loss
    B = rng.normal(size=(p, 12))
    X = least_squares(A, B)
    base = np.linalg.norm(B - X @ A)
    for _ in range(5):
        dX = rng.normal(size=X.shape)
        dX *= 1e-3 / np.linalg.norm(dX)
        assert np.linalg.norm(B - (X + dX) @ A) >= base - 1e-12


def fd_jac(f, x, h=1e-5):
    return np.column_stack([(f(x + h * e) - f(x - h * e)) / (2 * h) for e in np.eye(len(x))])


@FAST
@given(st.integers(0, 10_000), st.integers(1, 4), st.sampled_from(["elu", "tanh"]),
       arrays(np.float64, 4, elements=st.floats(-2, 2)))
def test_network_jacobian_and_inclusivity(seed, n, act, x):
    net = make_network(NetworkShape((n, 6, 5, 3), act, seed))
    x = x[:n]
    # zero biases put every pre-activation on the elu kink at the origin,
    # where central differences lose their second-order accuracy
    assume(np.linalg.norm(x) > 0.05)
    psi = net.evaluate(x)
    assert psi[:n].tobytes() == x.tobytes()
    assert psi[-1] == 1.0
    assert np.max(np.abs(net.jacobian(x) - fd_jac(net.evaluate, x))) < 1e-6


@FAST
@given(st.integers(1, 3), st.integers(2, 4), arrays(np.float64, 3, elements=st.floats(-1.5, 1.5)))
def test_dictionary_jacobian_and_inclusivity(n, degree, x):
    obs = make_dictionary(n, degree=degree, centers=[np.zeros(n)])
    x = x[:n]
    psi = obs.evaluate(x)
    assert psi[:n].tobytes() == x.tobytes()
    assert psi[-1] == 1.0
    assert np.max(np.abs(obs.jacobian(x) - fd_jac(obs.evaluate, x))) < 1e-6


@FAST
@given(arrays(np.float64, (3, 8), elements=finite), arrays(np.float64, (2, 8), elements=finite))
def test_standardization_roundtrip(X, Y):
    stats = ocdmd.Standardization.fit(X, Y)
    np.testing.assert_allclose(stats.x_inv(stats.x(X)), X, atol=1e-12 * max(1.0, np.abs(X).max()))
    np.testing.assert_allclose(stats.y_inv(stats.y(Y)), Y, atol=1e-12 * max(1.0, np.abs(Y).max()))


@FAST
@given(arrays(np.float64, (2, 10), elements=st.floats(-100, 100)))
def test_r2_edge_cases(T):
    base = T.mean(axis=1)
    if np.sum((T - base[:, None]) ** 2) < 1e-9:
        return
    assert abs(r2_score(T, T, base) - 1.0) < 1e-9
    assert abs(r2_score(T, np.repeat(base[:, None], 10, axis=1), base)) < 1e-9


@FAST
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_spectrum_preserved_under_v(seed, n):
    rng = np.random.default_rng(seed)
    K = rng.normal(size=(n + 1, n + 1)) / np.sqrt(n + 1)
    model = plain_model(K, rng.normal(size=(1, n + 1)), n)
    dec = decomposition.decompose(model, X0=rng.normal(size=(n, 3)), n_steps=8)
    assert np.linalg.norm(dec.V.T @ dec.V - np.eye(n + 1)) < 1e-9
    ev = np.sort_complex(np.linalg.eigvals(K))
    ev_t = np.sort_complex(np.linalg.eigvals(dec.K_transformed))
    np.testing.assert_allclose(ev_t, ev, atol=1e-8)
    assert dec.reduced_r2 >= 0.99


class _Spec:
    n, p = 2, 2


@FAST
@given(st.integers(1, 6), st.integers(12, 40), st.integers(1, 3))
def test_window_alignment(n_d, length, n_traj):
    trajs = []
    for i in range(n_traj):
        t = np.arange(length, dtype=float)
        states = np.column_stack([t + 1000 * i, -t])
        trajs.append(simulator.Trajectory(i, states, states * 10, t))
    ds = simulator.TrajectoryDataset(_Spec, 0, trajs, {"train": list(range(n_traj))})
    emb = delayembed.embed(ds, n_d)
    W = length // n_d
    assert emb.Zp.shape == (2 * n_d, n_traj * (W - 1))
    for i, (Z, X) in enumerate(zip(emb.windows, emb.states)):
        np.testing.assert_array_equal(Z[:2], 10 * X)  # first sample of window t is at n_d*t
        np.testing.assert_array_equal(X[0], np.arange(W) * n_d + 1000 * i)
        lo = emb.boundaries[i]
        np.testing.assert_array_equal(emb.Zf[:, lo:lo + W - 1], Z[:, 1:])
        np.testing.assert_array_equal(emb.Zp[:, lo:lo + W - 1], Z[:, :-1])


@settings(max_examples=3, deadline=None)
@given(st.integers(0, 1000))
def test_fixed_seed_reruns_are_byte_identical(seed):
    spec = simulator.builtin_example1()
    a = simulator.generate_dataset(spec, 3, seed)
    b = simulator.generate_dataset(spec, 3, seed)
    assert all(x.states.tobytes() == y.states.tobytes() for x, y in zip(a.trajectories, b.trajectories))
    snaps = ocdmd.build_snapshots(a)
    cfg = ocdmd.TrainConfig(epochs=3, seed=seed)
    m1 = ocdmd.fit_ocdeepdmd(snaps, NetworkShape((11, 6, 2), init_seed=seed), cfg)
    m2 = ocdmd.fit_ocdeepdmd(snaps, NetworkShape((11, 6, 2), init_seed=seed), cfg)
    assert m1.K.tobytes() == m2.K.tobytes()
    assert m1.map.parameters.tobytes() == m2.map.parameters.tobytes()
