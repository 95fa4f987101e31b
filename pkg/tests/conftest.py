import warnings

import numpy as np
import pytest

from kobs import simulator
from kobs.ocdmd import KoopmanModel, Standardization
from kobs.observables import make_dictionary
from kobs.simulator import GeneNetworkSpec

A_LIN = np.array([[0.9, 0.1, 0.0], [0.0, 0.8, 0.2], [0.05, 0.0, 0.7]])
C_LIN = np.array([[1.0, 0.0, 0.5], [0.0, 1.0, 0.0]])


def linear_spec(A=A_LIN, C=C_LIN, horizon=30):
    return GeneNetworkSpec(name="linear", n=A.shape[0], p=C.shape[0],
                           rhs=lambda x, p: A @ x, output_fn=lambda x, p: C @ x, params={},
                           sample_time=1.0, horizon=float(horizon),
                           ic_base=(0.0,) * A.shape[0], ic_noise_range=(-1.0, 1.0), discrete=True)


def plain_model(K, Wh, n):
    """Koopman model over psi = [x; 1] with identity scaling."""
    K, Wh = np.asarray(K, float), np.atleast_2d(np.asarray(Wh, float))
    zeros = np.zeros(n)
    stats = Standardization(zeros, np.ones(n), np.zeros(Wh.shape[0]), np.ones(Wh.shape[0]),
                            zeros, np.zeros(Wh.shape[0]))
    return KoopmanModel(make_dictionary(n), K, Wh, stats)


@pytest.fixture(scope="session")
def linear_data():
    return simulator.generate_dataset(linear_spec(), 9, 0)


@pytest.fixture(scope="session")
def analytical_data():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return simulator.generate_dataset(simulator.builtin_analytical(), 30, 0)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
