"""Built-in benchmark systems, fixed-step simulation and dataset generation."""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

SUBSTEPS = 100
SPLITS = ("train", "val", "test")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GeneNetworkSpec:
    """A sampled dynamical system ``x' = f(x)`` (or ``x+ = f(x)``) with ``y = h(x)``.

    ``rhs`` and ``output_fn`` take ``(x, params)`` where ``x`` is ``(n,)`` or
    ``(n, m)``; they must broadcast over trailing columns.
    """

    name: str
    n: int
    p: int
    rhs: Callable[[np.ndarray, Mapping[str, float]], np.ndarray]
    output_fn: Callable[[np.ndarray, Mapping[str, float]], np.ndarray]
    params: Mapping[str, float]
    sample_time: float
    horizon: float
    ic_base: tuple[float, ...]
    ic_noise_range: tuple[float, float]
    discrete: bool = False
    warnings: tuple[str, ...] = ()

    @property
    def n_samples(self) -> int:
        return int(round(self.horizon / self.sample_time)) + 1

    def output(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(self.output_fn(np.asarray(x, dtype=float), self.params), dtype=float)

    def with_overrides(self, **overrides: float) -> "GeneNetworkSpec":
        unknown = sorted(set(overrides) - set(self.params))
        if unknown:
            raise KeyError(f"{self.name} has no parameter(s) {unknown}")
        params = dict(self.params)
        params.update({k: float(v) for k, v in overrides.items()})
        return replace(self, params=params)


@dataclass
class Trajectory:
    ic_id: int
    states: np.ndarray  # (N_sim+1, n)
    outputs: np.ndarray  # (N_sim+1, p)
    times: np.ndarray


@dataclass
class TrajectoryDataset:
    spec: GeneNetworkSpec
    seed: int
    trajectories: list[Trajectory]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def split(self, name: str) -> list[Trajectory]:
        ids = set(self.splits[name])
        return [tr for tr in self.trajectories if tr.ic_id in ids]


# Example 1: ccd toxin-antitoxin network driving four gyrase-enhanced genes,
# with a Monod-type growth output.

EXAMPLE1_PARAMS = {
    "k1f": 1.4, "k1r": 0.003, "k2f": 1.1, "k2r": 0.19, "k3f": 0.04, "k3r": 2.2,
    "k4f": 0.0035, "k4r": 2.2, "k5f": 0.14, "k5r": 0.13,
    "a1": 0.8, "K1": 0.3, "n1": 2.0, "a2": 1.9, "K2": 2.0, "n2": 5.0,
    "a3": 4.0, "K3": 4.0, "n3": 2.0, "a4": 0.7, "K4": 0.5, "n4": 3.0,
    "gamma1": 0.3, "gamma2": 0.1, "gamma3": 0.03, "gamma4": 0.02,
    "gamma5": 0.4, "gamma6": 0.09, "gamma7": 0.01,
    "d1": 0.2, "d2": 0.03, "d3": 0.3, "d4": 0.1,
    "mu_y": 10.0, "y0": 0.02, "Ky": 10.0,
    # constant input on x1; its value is not listed with the parameters
    "u0": 0.0,
}


def _hill_act(x, a, k, n):
    r = (x / k) ** n
    return a * r / (1.0 + r)


def _example1_rhs(x, p):
    x1, x2, x3, x4, x5, x6, x7, x8, x9, x10, x11 = x
    v1 = p["k1f"] * x1 * x2 - p["k1r"] * x3
    v2 = p["k2f"] * x2 * x3 - p["k2r"] * x4
    v3 = p["k3f"] * x4 - p["k3r"] * x6 * x7
    v4 = p["k4f"] * x3 - p["k4r"] * x5 * x7
    v5 = p["k5f"] * x2 * x5 - p["k5r"] * x6
    return np.array([
        -v1 - p["gamma1"] * x1 + p["u0"],
        -v1 - v2 - v5 - p["gamma2"] * x2,
        v1 - v2 - v4 - p["gamma3"] * x3,
        v2 - v3 - p["gamma4"] * x4,
        v4 - v5 - p["gamma5"] * x5,
        v5 + v3 - p["gamma6"] * x6,
        v3 + v4 - p["gamma7"] * x7,
        _hill_act(x7, p["a1"], p["K1"], p["n1"]) - p["d1"] * x8,
        _hill_act(x7, p["a2"], p["K2"], p["n2"]) - p["d2"] * x9,
        _hill_act(x7, p["a3"], p["K3"], p["n3"]) - p["d3"] * x10,
        _hill_act(x7, p["a4"], p["K4"], p["n4"]) - p["d4"] * x11,
    ])


def _example1_output(x, p):
    x8, x11 = x[7], x[10]
    return np.array([p["y0"] * np.exp(p["mu_y"] * x8 / (p["Ky"] + x8 + x11))])


def builtin_example1(**overrides: float) -> GeneNetworkSpec:
    spec = GeneNetworkSpec(
        name="example1",
        n=11,
        p=1,
        rhs=_example1_rhs,
        output_fn=_example1_output,
        params=dict(EXAMPLE1_PARAMS),
        sample_time=1.0,
        horizon=100.0,
        ic_base=(0.4, 0.1, 0.2, 0.4, 0.3, 0.8, 0.5, 0.3, 0.8, 0.1, 1.8),
        ic_noise_range=(0.0, 1.0),
    )
    return spec.with_overrides(**overrides) if overrides else spec


# Example 2: activator-repressor, repressilator and toggle switch, one output each.

EXAMPLE2_PARAMS = {
    # activator-repressor
    "kappa1": 1.0, "delta1": 1.0, "alpha1": 250.0, "K1": 1.0, "n1": 2.0,
    "beta1": 0.04, "K2": 1.5, "m1": 3.0, "gamma1": 1.0,
    "kappa2": 1.0, "delta2": 1.0, "alpha2": 30.0, "beta2": 0.004, "gamma2": 0.5,
    "V1": 2.0, "K11": 1.0, "n11": 1.0, "K12": 0.4, "n12": 1.0,
    # repressilator; alpha3..alpha5 are placeholder values (override with --set)
    "c13": 0.1, "alpha3": 10.0, "alpha4": 10.0, "alpha5": 10.0,
    "gamma3": 0.3, "gamma4": 0.3, "gamma5": 0.3,
    "K5": 1.0, "n5": 2.0, "K3": 1.0, "n3": 4.0, "K4": 1.0, "n4": 3.0,
    "K24": 0.02, "n24": 1.0, "K25": 1.0, "n25": 2.0, "V2": 1.0,
    # toggle switch
    "c26": 0.001, "alpha6": 1.0, "K6": 10.0, "n6": 1.0,
    "gamma6": 0.09, "gamma7": 0.09, "K36": 120.0, "n36": 1.0, "V3": 1.0,
}


def _example2_rhs(x, p):
    x1, x2, x3, x4, x5, x6, x7 = x
    act = (x1 / p["K1"]) ** p["n1"]
    rep = (x2 / p["K2"]) ** p["m1"]
    return np.array([
        p["kappa1"] / p["delta1"] * (p["alpha1"] * act + p["beta1"]) / (1.0 + act + rep)
        - p["gamma1"] * x1,
        p["kappa2"] / p["delta2"] * (p["alpha2"] * act + p["beta2"]) / (1.0 + act)
        - p["gamma2"] * x2,
        p["c13"] * x1 + p["alpha3"] / (1.0 + (x5 / p["K5"]) ** p["n5"]) - p["gamma3"] * x3,
        p["alpha4"] / (1.0 + (x3 / p["K3"]) ** p["n3"]) - p["gamma4"] * x4,
        p["alpha5"] / (1.0 + (x4 / p["K4"]) ** p["n4"]) - p["gamma5"] * x5,
        p["c26"] * x2 + p["alpha6"] / (1.0 + (x7 / p["K6"]) ** p["n6"]) - p["gamma6"] * x6,
        p["alpha6"] / (1.0 + (x6 / p["K6"]) ** p["n6"]) - p["gamma7"] * x7,
    ])


def _example2_output(x, p):
    x1, x2, x4, x5, x6 = x[0], x[1], x[3], x[4], x[5]
    a1 = (x1 / p["K11"]) ** p["n11"]
    r1 = (x2 / p["K12"]) ** p["n12"]
    a2 = (x4 / p["K24"]) ** p["n24"]
    r2 = (x5 / p["K25"]) ** p["n25"]
    a3 = (x6 / p["K36"]) ** p["n36"]
    return np.array([
        p["V1"] * a1 / (1.0 + a1 + r1),
        p["V2"] * a2 / (1.0 + a2 + r2),
        p["V3"] * a3 / (1.0 + a3),
    ])


def builtin_example2(**overrides: float) -> GeneNetworkSpec:
    spec = GeneNetworkSpec(
        name="example2",
        n=7,
        p=3,
        rhs=_example2_rhs,
        output_fn=_example2_output,
        params=dict(EXAMPLE2_PARAMS),
        sample_time=0.5,
        horizon=100.0,
        ic_base=(100.1, 20.1, 10.0, 10.0, 10.0, 100.1, 100.1),
        ic_noise_range=(0.0, 4.0),
    )
    return spec.with_overrides(**overrides) if overrides else spec


def _analytical_map(x, p):
    x1, x2 = x
    return np.array([p["a"] * x1, p["b"] * x2 + p["gamma"] * x1 ** 2])


def _analytical_output(x, p):
    return np.array([x[1] ** 2])


def analytical_degeneracies(a: float, b: float, gamma: float, tol: float = 1e-12) -> list[str]:
    notes = []
    if abs(a * a - b) <= tol:
        notes.append(f"a^2 == b ({a * a:g}): eigenvalues of the minimal operator coincide")
    if abs(gamma - 2.0 * b) <= tol:
        notes.append(f"gamma == 2b ({gamma:g})")
    return notes


def builtin_analytical(a: float = 0.9, b: float = 0.5, gamma: float = 1.0,
                       horizon: int = 20) -> GeneNetworkSpec:
    """Discrete map ``x1+ = a x1``, ``x2+ = b x2 + gamma x1^2`` with ``y = x2^2``."""
    notes = tuple(analytical_degeneracies(a, b, gamma))
    for note in notes:
        warnings.warn(f"degenerate analytical parameters: {note}", stacklevel=2)
    return GeneNetworkSpec(
        name="analytical",
        n=2,
        p=1,
        rhs=_analytical_map,
        output_fn=_analytical_output,
        params={"a": float(a), "b": float(b), "gamma": float(gamma)},
        sample_time=1.0,
        horizon=float(horizon),
        ic_base=(1.0, 1.0),
        ic_noise_range=(0.0, 1.0),
        discrete=True,
        warnings=notes,
    )


BUILTINS = {
    "example1": builtin_example1,
    "example2": builtin_example2,
    "analytical": builtin_analytical,
}


def get_builtin(name: str, **overrides: float) -> GeneNetworkSpec:
    if name == "analytical":
        base = builtin_analytical(**{k: overrides.pop(k) for k in ("a", "b", "gamma") if k in overrides})
        return base.with_overrides(**overrides) if overrides else base
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(BUILTINS)}") from None
    return factory(**overrides)


def _rk4_step(f, x, params, h):
    k1 = f(x, params)
    k2 = f(x + 0.5 * h * k1, params)
    k3 = f(x + 0.5 * h * k2, params)
    k4 = f(x + h * k3, params)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(spec: GeneNetworkSpec, X0: np.ndarray, substeps: int = SUBSTEPS) -> np.ndarray:
    """Sample trajectories for a batch of initial conditions.

    ``X0`` is ``(n, m)``; returns ``(N_sim+1, n, m)``. Raises
    :class:`SimulationError` naming the offending columns and the first
    sample time at which the state stopped being finite.
    """
    X = np.array(X0, dtype=float, copy=True)
    n_steps = spec.n_samples - 1
    out = np.empty((n_steps + 1,) + X.shape)
    out[0] = X
    h = spec.sample_time / substeps
    with np.errstate(all="ignore"):
        for k in range(1, n_steps + 1):
            if spec.discrete:
                X = np.asarray(spec.rhs(X, spec.params), dtype=float)
            else:
                for _ in range(substeps):
                    X = _rk4_step(spec.rhs, X, spec.params, h)
            bad = ~np.all(np.isfinite(X), axis=0)
            if np.any(bad):
                cols = np.flatnonzero(np.atleast_1d(bad)).tolist()
                err = SimulationError(
                    f"{spec.name}: non-finite state at t={k * spec.sample_time:g}s (columns {cols})"
                )
                err.time = k * spec.sample_time
                err.columns = cols
                raise err
            out[k] = X
    return out


def _make_trajectory(spec, ic_id, states, rng=None, noise_std=0.0):
    if noise_std > 0.0:
        states = states + noise_std * rng.standard_normal(states.shape)
    outputs = spec.output(states.T).T
    times = spec.sample_time * np.arange(states.shape[0])
    return Trajectory(ic_id=ic_id, states=states, outputs=outputs, times=times)


def simulate(spec: GeneNetworkSpec, ic, seed: int = 0, noise_std: float = 0.0) -> Trajectory:
    """Simulate one initial condition.

    With ``noise_std > 0`` the sampled states receive additive Gaussian noise
    drawn from ``seed``; outputs are always evaluated on the stored states.
    """
    ic = np.asarray(ic, dtype=float)
    if ic.shape != (spec.n,):
        raise ValueError(f"initial condition must have shape ({spec.n},), got {ic.shape}")
    states = integrate(spec, ic.reshape(-1, 1))[:, :, 0]
    return _make_trajectory(spec, 0, states, np.random.default_rng(seed), noise_std)


def sample_initial_conditions(spec: GeneNetworkSpec, n_ic: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    lo, hi = spec.ic_noise_range
    noise = rng.uniform(lo, hi, size=(n_ic, spec.n))
    return np.asarray(spec.ic_base, dtype=float) + noise


def generate_dataset(spec: GeneNetworkSpec, n_ic: int = 30, seed: int = 0,
                     noise_std: float = 0.0) -> TrajectoryDataset:
    """Simulate ``n_ic`` random initial conditions and split them round-robin."""
    if n_ic < 3 or n_ic % 3:
        raise ValueError(f"n_ic must be a positive multiple of 3, got {n_ic}")
    ics = sample_initial_conditions(spec, n_ic, seed)
    try:
        states = integrate(spec, ics.T)
    except SimulationError as exc:
        raise SimulationError(f"simulation failed for initial conditions {exc.columns}: {exc}") from exc
    rng = np.random.default_rng([seed, 1])
    trajs = [_make_trajectory(spec, i, states[:, :, i], rng, noise_std) for i in range(n_ic)]
    splits = {name: [i for i in range(n_ic) if i % 3 == k] for k, name in enumerate(SPLITS)}
    return TrajectoryDataset(spec=spec, seed=seed, trajectories=trajs, splits=splits)


# ---------------------------------------------------------------- file IO

def write_dataset(dataset: TrajectoryDataset, csv_path, manifest_path=None) -> None:
    """Write ``ic_id,t,x1..xn,y1..yp`` rows plus a JSON manifest."""
    csv_path = Path(csv_path)
    if not csv_path.parent.is_dir():
        raise FileNotFoundError(f"output directory {csv_path.parent} does not exist")
    spec = dataset.spec
    header = ["ic_id", "t"] + [f"x{i + 1}" for i in range(spec.n)] + [f"y{i + 1}" for i in range(spec.p)]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for tr in dataset.trajectories:
            for t, x, y in zip(tr.times, tr.states, tr.outputs):
                w.writerow([tr.ic_id, repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in y])
    manifest_path = Path(manifest_path) if manifest_path else csv_path.with_suffix(".json")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        defaults = get_builtin(spec.name).params if spec.name in BUILTINS else {}
    manifest = {
        "system": spec.name,
        "seed": dataset.seed,
        "n_ic": len(dataset.trajectories),
        "n": spec.n,
        "p": spec.p,
        "sample_time": spec.sample_time,
        "horizon": spec.horizon,
        "params": {k: v for k, v in spec.params.items() if defaults.get(k) != v},
        "splits": dataset.splits,
        "trajectories": csv_path.name,
        "warnings": list(spec.warnings),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_dataset(manifest_path) -> TrajectoryDataset:
    manifest_path = Path(manifest_path)
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    params = dict(manifest.get("params", {}))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        if manifest["system"] == "analytical":
            spec = builtin_analytical(
                params.pop("a", 0.9), params.pop("b", 0.5), params.pop("gamma", 1.0),
                horizon=int(round(manifest["horizon"])),
            )
            spec = spec.with_overrides(**params) if params else spec
        else:
            spec = get_builtin(manifest["system"], **params)
    rows: dict[int, list[list[float]]] = {}
    with open(manifest_path.parent / manifest["trajectories"], encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.setdefault(int(row[0]), []).append([float(v) for v in row[1:]])
    trajs = []
    for ic_id in sorted(rows):
        arr = np.array(rows[ic_id])
        trajs.append(Trajectory(ic_id=ic_id, times=arr[:, 0], states=arr[:, 1:1 + spec.n],
                                outputs=arr[:, 1 + spec.n:]))
    splits = {k: [int(i) for i in v] for k, v in manifest["splits"].items()}
    return TrajectoryDataset(spec=spec, seed=int(manifest["seed"]), trajectories=trajs, splits=splits)
