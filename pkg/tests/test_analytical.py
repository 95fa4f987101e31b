import numpy as np
import pytest

from kobs import analytical
from kobs.observables import analytical_dictionary


def lift(x):
    return analytical_dictionary().evaluate(np.asarray(x, float))[:6]


def step(x, a, b, g):
    return np.array([a * x[0], b * x[1] + g * x[0] ** 2])


def test_default_entries():
    K = analytical.exact_koopman().K6
    assert K[3, 3] == 0.25
    assert K[3, 4] == 1.0
    assert K[3, 5] == 1.0
    assert K[4, 4] == pytest.approx(0.6561, abs=1e-15)
    assert K[2, 2] == pytest.approx(0.81, abs=1e-15)


def test_zero_gamma_decouples():
    K = analytical.exact_koopman(0.9, 0.5, 0.0).K6
    assert K[1, 2] == 0 and K[3, 4] == 0 and K[3, 5] == 0 and K[5, 4] == 0


def test_permutation_gives_minimal_block():
    ex = analytical.exact_koopman(0.7, 0.3, 1.3)
    T = ex.P.T @ ex.K6 @ ex.P
    np.testing.assert_array_equal(T[:3, :3], ex.K3)
    assert not np.any(T[:3, 3:])
    np.testing.assert_array_equal((ex.Wh @ ex.P)[0], [1, 0, 0, 0, 0, 0])


def test_minimal_spectrum():
    a, b = 0.9, 0.5
    ex = analytical.exact_koopman(a, b, 1.0)
    ev = np.sort(np.linalg.eigvals(ex.K3).real)
    np.testing.assert_allclose(ev, np.sort([b * b, a ** 4, a * a * b]), atol=1e-10)


@pytest.mark.parametrize("params", [(0.9, 0.5, 1.0), (0.95, 0.3, 0.4), (0.6, 0.8, 2.0)])
def test_lifted_trajectory_matches_map(params):
    K = analytical.exact_koopman(*params).K6
    x = np.array([1.2, -0.7])
    psi = lift(x)
    for _ in range(20):
        x = step(x, *params)
        psi = K @ psi
        np.testing.assert_allclose(psi, lift(x), rtol=1e-12, atol=1e-14)


def test_last_row_is_fixed_by_two_step_output():
    # h(f^2(1, 1)) with a=0.9, b=0.5, g=1: f = (0.9, 1.5), f^2 = (0.81, 1.56)
    y2 = 1.56 ** 2
    psi0 = lift([1.0, 1.0])
    K = analytical.exact_koopman().K6
    w = analytical.exact_koopman().Wh[0]
    assert w @ K @ K @ psi0 == pytest.approx(y2, abs=1e-12)
    Kp = analytical.printed_matrix(0.9, 0.5, 1.0)
    assert abs(w @ Kp @ Kp @ psi0 - y2) > 1e-3


def test_printed_variant_agrees_at_unit_a():
    np.testing.assert_array_equal(analytical.printed_matrix(1.0, 0.4, 1.0),
                                  analytical.exact_koopman(1.0, 0.4, 1.0).K6)


def test_observation_space_is_three_dimensional():
    C = analytical.observation_space_coefficients(0.9, 0.5, 0.7)
    assert np.linalg.matrix_rank(C) == 3


def test_verify_default_passes():
    rep = analytical.verify_pipeline()
    assert rep.passed, "\n".join(rep.lines())
    assert rep.seconds < 10


def test_verify_reports_degenerate_parameters():
    rep = analytical.verify_pipeline(a=0.8, b=0.64)
    assert any("a^2 == b" in n for n in rep.notes)
    assert any(line.startswith("NOTE") for line in rep.lines())


def test_verify_with_small_noise():
    tol = analytical.Tolerances(k_recovery=1e-3, coupling=1e-3, spectrum=1e-3, span=1e-3)
    rep = analytical.verify_pipeline(tol, noise_std=1e-6)
    k = next(c for c in rep.checks if c.name == "K recovery")
    assert k.passed, k.detail


def test_zero_tolerance_fails():
    rep = analytical.verify_pipeline(analytical.Tolerances(0.0, 0.0, 0.0, 0.0))
    assert not rep.passed
    assert any(line.startswith("FAIL") for line in rep.lines())
