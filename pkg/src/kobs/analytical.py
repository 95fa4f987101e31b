"""Exact Koopman system of the two-state polynomial map and an end-to-end check.

For ``x1+ = a x1``, ``x2+ = b x2 + g x1^2``, ``y = x2^2`` the observables
``(x1, x2, x1^2, x2^2, x1^4, x1^2 x2)`` close under the map. Note the last
row: ``x1^2 x2`` advances to ``a^2 g x1^4 + a^2 b x1^2 x2``.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .decomposition import decompose, sensitivity
from .ocdmd import build_snapshots, fit_edmd
from .observables import analytical_dictionary
from .simulator import analytical_degeneracies, builtin_analytical, generate_dataset

LABELS = ("x1", "x2", "x1^2", "x2^2", "x1^4", "x1^2*x2")
# minimal block observables, in K6 index order
MINIMAL = (3, 4, 5)


@dataclass
class ExactKoopman:
    a: float
    b: float
    gamma: float
    K6: np.ndarray
    Wh: np.ndarray
    K3: np.ndarray
    P: np.ndarray
    labels: tuple[str, ...] = LABELS
    notes: list[str] = field(default_factory=list)

    @property
    def minimal_spectrum(self) -> np.ndarray:
        return np.sort(np.array([self.b ** 2, self.a ** 4, self.a ** 2 * self.b]))


def exact_koopman(a: float = 0.9, b: float = 0.5, gamma: float = 1.0) -> ExactKoopman:
    a2 = a * a
    K6 = np.array([
        [a, 0, 0, 0, 0, 0],
        [0, b, gamma, 0, 0, 0],
        [0, 0, a2, 0, 0, 0],
        [0, 0, 0, b * b, gamma * gamma, 2 * b * gamma],
        [0, 0, 0, 0, a2 * a2, 0],
        [0, 0, 0, 0, a2 * gamma, a2 * b],
    ], dtype=float)
    Wh = np.array([[0, 0, 0, 1, 0, 0]], dtype=float)
    # V = [[0, I3], [I3, 0]] moves (x2^2, x1^4, x1^2 x2) to the front
    P = np.zeros((6, 6))
    P[3:, :3] = np.eye(3)
    P[:3, 3:] = np.eye(3)
    K3 = (P.T @ K6 @ P)[:3, :3]
    return ExactKoopman(a, b, gamma, K6, Wh, K3, P, notes=analytical_degeneracies(a, b, gamma))


def printed_matrix(a: float, b: float, gamma: float) -> np.ndarray:
    """Variant of K6 whose last row is (0,0,0,0,g,b); it equals K6 only when a^2 = 1."""
    K = exact_koopman(a, b, gamma).K6.copy()
    K[5, 4], K[5, 5] = gamma, b
    return K


def observation_space_coefficients(a: float, b: float, gamma: float) -> np.ndarray:
    """Coefficients of ``h, h o f, h o f^2`` on ``(x2^2, x1^4, x1^2 x2)``."""
    K3 = exact_koopman(a, b, gamma).K3
    w = np.array([1.0, 0.0, 0.0])
    return np.vstack([w, w @ K3, w @ K3 @ K3])


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class VerifyReport:
    checks: list[CheckResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail):
        self.checks.append(CheckResult(name, bool(passed), detail))

    def lines(self) -> list[str]:
        out = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in self.checks]
        out += [f"NOTE {n}" for n in self.notes]
        return out


@dataclass
class Tolerances:
    k_recovery: float = 1e-6
    coupling: float = 1e-8
    spectrum: float = 1e-6
    span: float = 1e-6


def verify_pipeline(tol: Tolerances | None = None, a: float = 0.9, b: float = 0.5,
                    gamma: float = 1.0, n_ic: int = 30, seed: int = 0,
                    noise_std: float = 0.0) -> VerifyReport:
    """simulate -> fit_edmd -> decompose -> sensitivity against the exact system."""
    tol = tol or Tolerances()
    t0 = time.perf_counter()
    rep = VerifyReport()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        spec = builtin_analytical(a, b, gamma)
        ds = generate_dataset(spec, n_ic, seed, noise_std=noise_std)
        exact = exact_koopman(a, b, gamma)
        rep.notes += [f"degenerate parameters: {n}" for n in exact.notes]
        snaps = build_snapshots(ds, "train", standardize=False)
        model = fit_edmd(snaps, analytical_dictionary())

    err = float(np.max(np.abs(model.K[:6, :6] - exact.K6)))
    rep.add("K recovery", err <= tol.k_recovery, f"max |K - K6| = {err:.3e} (tol {tol.k_recovery:g})")
    werr = float(np.max(np.abs(model.Wh[0, :6] - exact.Wh[0])))
    rep.add("W_h selects x2^2", werr <= tol.k_recovery, f"max |W_h - e4| = {werr:.3e}")

    train = ds.split("train")
    dec = decompose(model, 0, trajectories=train)
    rep.add("minimal dimension", dec.n_oL == 3, f"n_oL = {dec.n_oL} (expected 3)")
    rep.add("coupling blocks", dec.coupling_residual <= tol.coupling,
            f"|K~_12| + |W~_2| = {dec.coupling_residual:.3e} (tol {tol.coupling:g})")

    if dec.n_oL == 3:
        ev = np.sort(np.linalg.eigvals(dec.K1).real)
        spec_err = float(np.max(np.abs(ev - exact.minimal_spectrum)))
        # characteristic polynomial stays well conditioned at repeated eigenvalues
        poly_err = float(np.max(np.abs(np.poly(dec.K1) - np.poly(exact.minimal_spectrum))))
    else:
        spec_err = poly_err = float("inf")
    rep.add("reduced spectrum", min(spec_err, poly_err) <= tol.spectrum,
            f"eig(K1) vs {{b^2, a^4, a^2 b}}: max err {spec_err:.3e}, char. poly err {poly_err:.3e} "
            f"(tol {tol.spectrum:g})")

    X = np.hstack([tr.states.T for tr in train])
    psi_o = dec.reduced_observables(X)
    mons = np.vstack([X[1] ** 2, X[0] ** 4, X[0] ** 2 * X[1]])
    coef = np.linalg.lstsq(mons.T, psi_o.T, rcond=None)[0]
    span_res = float(np.linalg.norm(mons.T @ coef - psi_o.T) / max(np.linalg.norm(psi_o), 1e-300))
    rep.add("psi_o spans {x2^2, x1^4, x1^2 x2}", span_res <= tol.span, f"relative residual {span_res:.3e}")

    C = observation_space_coefficients(a, b, gamma)
    rank = int(np.linalg.matrix_rank(C, tol=1e-10))
    det = float(np.linalg.det(C))
    rep.add("observation space dimension", rank == 3,
            f"rank of (h, h.f, h.f^2) on (x2^2, x1^4, x1^2 x2) = {rank}, det = {det:.4g}")
    # any h.f^i is a combination of the first three
    w = np.array([1.0, 0.0, 0.0]) @ np.linalg.matrix_power(exact.K3, 5)
    combo = np.linalg.lstsq(C.T, w, rcond=None)[0]
    rep.add("h.f^5 in span of first three", np.linalg.norm(C.T @ combo - w) <= tol.span,
            f"residual {np.linalg.norm(C.T @ combo - w):.3e}")

    sens = sensitivity(dec, X)
    # |dy/dx2| = |W_h1 . d psi_o/dx2| <= |W_h1| * |S[:, x2]|
    bound = float(np.max(np.abs(2.0 * X[1]))) / np.linalg.norm(dec.Wh1)
    rep.add("x2 sensitivity bound", sens.norms[1] >= bound * (1 - 1e-9),
            f"|S[:,x2]| = {sens.norms[1]:.4g} >= {bound:.4g}")
    rep.seconds = time.perf_counter() - t0
    return rep
