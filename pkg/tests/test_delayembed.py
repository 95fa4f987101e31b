import numpy as np
import pytest

from conftest import linear_spec
from kobs import delayembed, simulator

LINEAR_GRID = {"n_d": [1], "backend": ["dictionary"]}


@pytest.fixture(scope="module")
def three_output_data():
    spec = linear_spec(C=np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 1.0]]), horizon=100)
    return simulator.generate_dataset(spec, 6, 0)


def test_unit_delay_is_plain_shift(three_output_data):
    emb = delayembed.embed(three_output_data, 1)
    Y = np.hstack([tr.outputs[:-1].T for tr in three_output_data.split("train")])
    Yf = np.hstack([tr.outputs[1:].T for tr in three_output_data.split("train")])
    np.testing.assert_array_equal(emb.Zp, Y)
    np.testing.assert_array_equal(emb.Zf, Yf)


def test_window_arithmetic(three_output_data):
    emb = delayembed.embed(three_output_data, 4)
    assert emb.windows[0].shape == (12, 25)
    assert emb.Zp.shape == (12, 2 * 24)
    assert emb.boundaries == [0, 24]
    tr = three_output_data.split("train")[0]
    np.testing.assert_array_equal(emb.windows[0][:, 3], tr.outputs[12:16].ravel())


def test_windows_pair_with_state_at_start(three_output_data):
    emb = delayembed.embed(three_output_data, 3)
    tr = three_output_data.split("train")[1]
    for t in (0, 5, 32):
        np.testing.assert_array_equal(emb.states[1][:, t], tr.states[3 * t])
    # Zf window t is Zp window t+1 within each IC
    np.testing.assert_array_equal(emb.Zf[:, :31], emb.Zp[:, 1:32])
    assert emb.boundaries[1] == 32


def test_delay_too_long_is_rejected(three_output_data):
    with pytest.raises(ValueError, match="2\\*n_d"):
        delayembed.embed(three_output_data, 51)


def test_empty_output_subset_rejected(three_output_data):
    with pytest.raises(ValueError):
        delayembed.embed(three_output_data, 2, outputs=())


def test_analytical_outputs_admit_exact_delay_model(analytical_data):
    # three consecutive outputs are a linear coordinate chart of (x2^2, x1^4, x1^2 x2)
    best, board = delayembed.fit_delay_koopman(analytical_data, {"n_d": [1, 3], "backend": ["dictionary"]})
    assert best.n_d == 3
    assert best.report["val"]["r2_z_1step"] > 1 - 1e-9
    assert best.report["val"]["r2_z_nstep"] > 1 - 1e-9
    Z = np.random.default_rng(0).normal(size=(3, 5))
    np.testing.assert_array_equal(best.lift(Z)[:3], best.model.stats.x(Z))


def test_constant_outputs_are_flagged():
    ds = simulator.generate_dataset(linear_spec(C=np.zeros((1, 3))), 3, 0)
    best, _ = delayembed.fit_delay_koopman(ds, LINEAR_GRID)
    assert best.flags
    assert np.isnan(best.report["val"]["r2_z_1step"])


def test_diffeomorphism_identity_case():
    ds = simulator.generate_dataset(linear_spec(C=np.eye(3), horizon=60), 30, 0)
    best, _ = delayembed.fit_delay_koopman(ds, LINEAR_GRID)
    # Adagrad creeps toward the linear solution; 15k epochs clears 0.999
    dm = delayembed.fit_diffeomorphism(best, ds, hidden=(16,), epochs=15000, lr=0.05)
    assert np.all(dm.r2 > 0.999)
    assert np.all(dm.r2 <= 1.0)
    again = delayembed.fit_diffeomorphism(best, ds, hidden=(16,), epochs=15000, lr=0.05)
    assert again.encoder.params.tobytes() == dm.encoder.params.tobytes()


def test_decoupled_state_is_not_reconstructed():
    A = np.array([[0.9, 0.2, 0.0], [-0.2, 0.9, 0.0], [0.0, 0.0, 0.8]])
    ds = simulator.generate_dataset(linear_spec(A=A, C=np.array([[1.0, 0.0, 0.0]]), horizon=60), 9, 0)
    best, _ = delayembed.fit_delay_koopman(ds, {"n_d": [2], "backend": ["dictionary"]})
    dm = delayembed.fit_diffeomorphism(best, ds, hidden=(16,), epochs=1500, lr=0.05)
    assert dm.r2[0] > 0.95 and dm.r2[1] > 0.95
    assert dm.r2[2] < 0.5


def test_reconstruction_report(three_output_data):
    best, _ = delayembed.fit_delay_koopman(three_output_data, LINEAR_GRID)
    dm = delayembed.fit_diffeomorphism(best, three_output_data, hidden=(8,), epochs=20)
    csv_text, svg_text = delayembed.reconstruction_report({"y1-y2-y3": dm})
    lines = csv_text.splitlines()
    assert lines[0] == "subset,state_index,r2"
    assert len(lines) == 1 + 3
    assert "<svg" in svg_text
    with pytest.raises(ValueError):
        delayembed.reconstruction_report({})
    assert delayembed.subset_name((0, 2)) == "y1-y3"
