"""Output-constrained Koopman models ``psi+ = K psi``, ``y = W_h psi``.

Fixed dictionaries are fit in closed form. Network observables are trained
by alternating Adagrad steps on the network weights with a least-squares
refresh of ``K`` and ``W_h``.
"""

from __future__ import annotations

import itertools
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .numerics import Adagrad, TrainingDiverged, effective_rank, least_squares, r2_score
from .observables import NetworkMap, NetworkShape, ObservableMap, make_dictionary, map_from_descriptor
from .simulator import TrajectoryDataset

METRICS = ("r2_x_1step", "r2_x_nstep", "r2_y_1step", "r2_y_nstep")


@dataclass
class Standardization:
    """Affine scaling ``(v - shift) / scale`` plus raw training means."""

    x_shift: np.ndarray
    x_scale: np.ndarray
    y_shift: np.ndarray
    y_scale: np.ndarray
    x_bar: np.ndarray
    y_bar: np.ndarray

    @classmethod
    def fit(cls, Xp: np.ndarray, Yp: np.ndarray, enabled: bool = True) -> "Standardization":
        x_bar, y_bar = Xp.mean(axis=1), Yp.mean(axis=1)
        if not enabled:
            return cls(np.zeros_like(x_bar), np.ones_like(x_bar),
                       np.zeros_like(y_bar), np.ones_like(y_bar), x_bar, y_bar)
        x_std, y_std = Xp.std(axis=1), Yp.std(axis=1)
        # constant channels keep unit scale
        x_std = np.where(x_std > 0, x_std, 1.0)
        y_std = np.where(y_std > 0, y_std, 1.0)
        return cls(x_bar.copy(), x_std, y_bar.copy(), y_std, x_bar, y_bar)

    def x(self, X):
        return (X - self.x_shift[:, None]) / self.x_scale[:, None]

    def x_inv(self, Xs):
        return Xs * self.x_scale[:, None] + self.x_shift[:, None]

    def y(self, Y):
        return (Y - self.y_shift[:, None]) / self.y_scale[:, None]

    def y_inv(self, Ys):
        return Ys * self.y_scale[:, None] + self.y_shift[:, None]

    def to_dict(self):
        return {k: [float(v) for v in getattr(self, k)]
                for k in ("x_shift", "x_scale", "y_shift", "y_scale", "x_bar", "y_bar")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: np.array(v, dtype=float) for k, v in d.items()})


@dataclass
class SnapshotSet:
    Xp: np.ndarray
    Xf: np.ndarray
    Yp: np.ndarray
    boundaries: list[int]
    stats: Standardization

    @property
    def m(self) -> int:
        return self.Xp.shape[1]


def _stack(trajs, lag=1):
    Xp, Xf, Yp, bounds = [], [], [], []
    start = 0
    for tr in trajs:
        if len(tr.states) < 2:
            raise ValueError(f"trajectory {tr.ic_id} has fewer than 2 samples")
        Xp.append(tr.states[:-lag].T)
        Xf.append(tr.states[lag:].T)
        Yp.append(tr.outputs[:-lag].T)
        bounds.append(start)
        start += len(tr.states) - lag
    return np.hstack(Xp), np.hstack(Xf), np.hstack(Yp), bounds


def training_stats(dataset: TrajectoryDataset, standardize: bool = True) -> Standardization:
    Xp, _, Yp, _ = _stack(dataset.split("train"))
    return Standardization.fit(Xp, Yp, standardize)


def build_snapshots(dataset: TrajectoryDataset, split: str = "train",
                    stats: Standardization | None = None, standardize: bool = True) -> SnapshotSet:
    """Shift-pair snapshots of one split, standardized with training statistics."""
    trajs = dataset.split(split)
    if not trajs:
        raise ValueError(f"split {split!r} is empty")
    if stats is None:
        stats = training_stats(dataset, standardize)
    Xp, Xf, Yp, bounds = _stack(trajs)
    return SnapshotSet(stats.x(Xp), stats.x(Xf), stats.y(Yp), bounds, stats)


@dataclass
class KoopmanModel:
    map: ObservableMap
    K: np.ndarray
    Wh: np.ndarray
    stats: Standardization
    metadata: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def lifted_dim(self) -> int:
        return self.K.shape[0]

    def lift(self, X_raw: np.ndarray) -> np.ndarray:
        return self.map.evaluate(self.stats.x(np.asarray(X_raw, dtype=float)))

    def to_dict(self) -> dict:
        def mat(a):
            return {"rows": a.shape[0], "cols": a.shape[1], "data": [float(v) for v in a.ravel()]}
        return {
            "observables": self.map.descriptor(),
            "K": mat(self.K),
            "W_h": mat(self.Wh),
            "standardization": self.stats.to_dict(),
            "metadata": self.metadata,
            "warnings": self.warnings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KoopmanModel":
        def mat(e):
            return np.array(e["data"], dtype=float).reshape(e["rows"], e["cols"])
        return cls(map_from_descriptor(d["observables"]), mat(d["K"]), mat(d["W_h"]),
                   Standardization.from_dict(d["standardization"]),
                   d.get("metadata", {}), list(d.get("warnings", [])))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "KoopmanModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _closed_form(Pp, Pf, Yp):
    return least_squares(Pp, Pf), least_squares(Pp, Yp)


def fit_edmd(snapshots: SnapshotSet, obs_map: ObservableMap) -> KoopmanModel:
    """Closed-form fit for a fixed dictionary.

    With ``psi`` fixed the objective splits into two independent least-squares
    problems, one for ``K`` and one for ``W_h``.
    """
    if obs_map.backend != "dictionary":
        raise TypeError("fit_edmd needs a dictionary map; use fit_ocdeepdmd for networks")
    Pp = obs_map.evaluate(snapshots.Xp)
    Pf = obs_map.evaluate(snapshots.Xf)
    K, Wh = _closed_form(Pp, Pf, snapshots.Yp)
    model = KoopmanModel(obs_map, K, Wh, snapshots.stats, {"method": "edmd"})
    rank = effective_rank(Pp)
    if rank < obs_map.n + 1:
        msg = f"lifted snapshot matrix has rank {rank} < n+1 = {obs_map.n + 1}"
        model.warnings.append(msg)
        warnings.warn(msg, stacklevel=2)
    return model


@dataclass
class TrainConfig:
    lr: float = 0.02
    epochs: int = 2000
    batch_size: int | None = None
    output_weight: float = 1.0
    mode: str = "alternating"  # or "joint"
    seed: int = 0
    divergence_factor: float = 1e3


def _loss_terms(Pp, Pf, Yp, K, Wh):
    R1 = Pf - K @ Pp
    R2 = Yp - Wh @ Pp
    return R1, R2


def fit_ocdeepdmd(snapshots: SnapshotSet, shape: NetworkShape,
                  config: TrainConfig | None = None) -> KoopmanModel:
    """Train network observables against the output-constrained DMD loss.

    Loss per sample: ``|psi(x+) - K psi(x)|^2 + w |y - W_h psi(x)|^2``,
    averaged over the snapshot columns.
    """
    cfg = config or TrainConfig()
    if shape.layer_widths[0] != snapshots.Xp.shape[0]:
        raise ValueError("network input width must equal the state dimension")
    obs = NetworkMap(shape)
    params = obs.parameters.copy()
    Xp, Xf, Yp = snapshots.Xp, snapshots.Xf, snapshots.Yp
    m = Xp.shape[1]
    lam = cfg.output_weight
    rng = np.random.default_rng(cfg.seed)

    def lifted(p, cols=slice(None)):
        net_map = obs.with_parameters(p)
        return net_map, net_map.evaluate(Xp[:, cols]), net_map.evaluate(Xf[:, cols])

    def loss_value(Pp, Pf, Ycols, K, Wh):
        R1, R2 = _loss_terms(Pp, Pf, Ycols, K, Wh)
        return (np.sum(R1 ** 2) + lam * np.sum(R2 ** 2)) / Pp.shape[1]

    _, Pp, Pf = lifted(params)
    K, Wh = _closed_form(Pp, Pf, Yp)
    history = [float(loss_value(Pp, Pf, Yp, K, Wh))]
    joint = cfg.mode == "joint"
    if cfg.mode not in ("alternating", "joint"):
        raise ValueError(f"unknown training mode {cfg.mode!r}")
    nL = obs.lifted_dim
    size = params.size + (K.size + Wh.size if joint else 0)
    opt = Adagrad(size, lr=cfg.lr)
    batch = cfg.batch_size or m

    for epoch in range(cfg.epochs):
        order = rng.permutation(m) if batch < m else np.arange(m)
        for start in range(0, m, batch):
            cols = order[start:start + batch]
            net_map, Ppb, Pfb = lifted(params, cols)
            R1, R2 = _loss_terms(Ppb, Pfb, Yp[:, cols], K, Wh)
            scale = 2.0 / len(cols)
            up_f = scale * R1
            up_p = -scale * (K.T @ R1 + lam * Wh.T @ R2)
            g = net_map.backprop(Xf[:, cols], up_f) + net_map.backprop(Xp[:, cols], up_p)
            if joint:
                gK = -scale * R1 @ Ppb.T
                gW = -scale * lam * R2 @ Ppb.T
                full = np.concatenate([params, K.ravel(), Wh.ravel()])
                full = opt.step(full, np.concatenate([g, gK.ravel(), gW.ravel()]))
                params = full[:params.size]
                K = full[params.size:params.size + K.size].reshape(nL, nL)
                Wh = full[params.size + K.size:].reshape(Wh.shape)
            else:
                params = opt.step(params, g)
        _, Pp, Pf = lifted(params)
        if not joint:
            if not np.all(np.isfinite(Pp)):
                raise TrainingDiverged("non-finite observables", epoch, history)
            K, Wh = _closed_form(Pp, Pf, Yp)
        value = float(loss_value(Pp, Pf, Yp, K, Wh))
        if not np.isfinite(value) or value > cfg.divergence_factor * history[0]:
            raise TrainingDiverged("loss diverged", epoch, history + [value])
        history.append(value)

    meta = {
        "method": "ocdeepdmd",
        "mode": cfg.mode,
        "lr": cfg.lr,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "output_weight": cfg.output_weight,
        "seed": cfg.seed,
        "loss_history": history,
    }
    return KoopmanModel(obs.with_parameters(params), K, Wh, snapshots.stats, meta)


# ---------------------------------------------------------------- scoring

@dataclass
class FitReport:
    metrics: dict[str, dict[str, float]] = field(default_factory=dict)

    def __getitem__(self, split):
        return self.metrics[split]

    def to_csv(self) -> str:
        lines = ["split,metric,value"]
        for split, vals in self.metrics.items():
            for name in METRICS:
                lines.append(f"{split},{name},{vals[name]!r}")
        return "\n".join(lines) + "\n"


def rollout(K: np.ndarray, z0: np.ndarray, steps: int) -> np.ndarray:
    """Columns ``K^j z0`` for ``j = 1..steps``."""
    out = np.empty((len(z0), steps))
    z = z0
    with np.errstate(all="ignore"):
        for j in range(steps):
            z = K @ z
            out[:, j] = z
    return out


def predict_split(model: KoopmanModel, trajs) -> dict[str, np.ndarray]:
    """Raw-unit 1-step and n-step predictions of ``x_j``, ``y_j`` for ``j >= 1``."""
    n = model.map.n
    st = model.stats
    acc = {k: [] for k in ("x", "y", "x1", "y1", "xn", "yn")}
    with np.errstate(all="ignore"):
        for tr in trajs:
            P = model.lift(tr.states.T)
            one = model.K @ P[:, :-1]
            multi = rollout(model.K, P[:, 0], P.shape[1] - 1)
            acc["x"].append(tr.states[1:].T)
            acc["y"].append(tr.outputs[1:].T)
            acc["x1"].append(st.x_inv(one[:n]))
            acc["y1"].append(st.y_inv(model.Wh @ one))
            acc["xn"].append(st.x_inv(multi[:n]))
            acc["yn"].append(st.y_inv(model.Wh @ multi))
    return {k: np.hstack(v) for k, v in acc.items()}


def score(model: KoopmanModel, dataset: TrajectoryDataset, split: str = "val") -> dict[str, float]:
    """Pooled r^2 of 1-step and n-step state/output predictions on one split.

    The baseline is the training mean of ``X_p`` (or ``Y_p``), matching the
    stored standardization statistics.
    """
    trajs = dataset.split(split)
    if not trajs:
        raise ValueError(f"split {split!r} is empty")
    pr = predict_split(model, trajs)
    st = model.stats
    return {
        "r2_x_1step": r2_score(pr["x"], pr["x1"], st.x_bar),
        "r2_x_nstep": r2_score(pr["x"], pr["xn"], st.x_bar),
        "r2_y_1step": r2_score(pr["y"], pr["y1"], st.y_bar),
        "r2_y_nstep": r2_score(pr["y"], pr["yn"], st.y_bar),
    }


def fit_report(model: KoopmanModel, dataset: TrajectoryDataset,
               splits: Sequence[str] = ("train", "val", "test")) -> FitReport:
    return FitReport({s: score(model, dataset, s) for s in splits if dataset.splits.get(s)})


# ---------------------------------------------------------------- grid search

DEFAULT_GRID = {
    "backend": ["network"],
    "hidden": [(24, 24)],
    "nonlinear_dim": [10],
    "activation": ["elu"],
    "lr": [0.02],
    "epochs": [1500],
}


def expand_grid(grid: dict[str, Sequence]) -> list[dict]:
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    keys = list(grid)
    for k in keys:
        if len(grid[k]) == 0:
            raise ValueError(f"grid entry {k!r} has no values")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def train_candidate(snapshots: SnapshotSet, combo: dict, seed: int = 0) -> KoopmanModel:
    """Train one grid combination.

    Dictionary combos accept ``degree``, ``monomials``, ``centers``/``sigma``;
    network combos accept ``hidden``, ``nonlinear_dim``, ``activation`` and
    the :class:`TrainConfig` fields.
    """
    n = snapshots.Xp.shape[0]
    backend = combo.get("backend", "network")
    if backend == "dictionary":
        obs = make_dictionary(n, degree=combo.get("degree"), monomials=combo.get("monomials"),
                              centers=combo.get("centers"), sigma=combo.get("sigma", 1.0))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            model = fit_edmd(snapshots, obs)
    elif backend == "network":
        widths = (n,) + tuple(combo.get("hidden", (24, 24))) + (int(combo.get("nonlinear_dim", 10)),)
        shape = NetworkShape(widths, combo.get("activation", "elu"), int(combo.get("init_seed", seed)))
        cfg = TrainConfig(**{k: combo[k] for k in TrainConfig.__dataclass_fields__ if k in combo})
        if "seed" not in combo:
            cfg.seed = seed
        model = fit_ocdeepdmd(snapshots, shape, cfg)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    model.metadata["combo"] = _jsonable(combo)
    return model


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _rank_value(metrics):
    vals = [metrics[k] for k in METRICS]
    if not all(np.isfinite(v) for v in vals):
        return float("-inf")
    return float(sum(vals))


@dataclass
class GridResult:
    best: KoopmanModel
    leaderboard: list[dict]

    def leaderboard_csv(self) -> str:
        lines = ["rank,index,n_L,score," + ",".join(METRICS) + ",combo,error"]
        for row in self.leaderboard:
            vals = ",".join(repr(row["metrics"].get(k, float("nan"))) for k in METRICS)
            combo = json.dumps(row["combo"], sort_keys=True).replace('"', "'")
            lines.append(f"{row['rank']},{row['index']},{row['n_L']},{row['score']!r},{vals},\"{combo}\",{row['error'] or ''}")
        return "\n".join(lines) + "\n"


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("KOBS_THREADS", "1")))
    except ValueError:
        return 1


def grid_search(dataset: TrajectoryDataset, grid: dict[str, Sequence] | list[dict],
                seed: int = 0, standardize: bool = True) -> GridResult:
    """Train every grid combination and rank them on the validation split.

    Ranking key: sum of the four validation r^2 values, ties broken by smaller
    lifted dimension and then grid order. Combination ``i`` trains with seed
    ``seed + i``.
    """
    combos = grid if isinstance(grid, list) else expand_grid(grid)
    if not combos:
        raise ValueError("hyperparameter grid is empty")
    snaps = build_snapshots(dataset, "train", standardize=standardize)

    def run(idx):
        combo = combos[idx]
        try:
            model = train_candidate(snaps, combo, seed + idx)
            metrics = score(model, dataset, "val")
            return idx, model, metrics, None
        except (TrainingDiverged, np.linalg.LinAlgError, FloatingPointError) as exc:
            return idx, None, {}, f"{type(exc).__name__}: {exc}"

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, range(len(combos))))

    rows = []
    for idx, model, metrics, err in results:
        value = _rank_value(metrics) if model is not None else float("-inf")
        rows.append({"index": idx, "combo": _jsonable(combos[idx]), "model": model,
                     "metrics": metrics, "score": value,
                     "n_L": model.lifted_dim if model is not None else -1, "error": err})
    ok = [r for r in rows if r["model"] is not None]
    if not ok:
        diag = "; ".join(f"#{r['index']}: {r['error']}" for r in rows)
        raise TrainingDiverged(f"all {len(rows)} grid combinations failed ({diag})", -1)
    rows.sort(key=lambda r: (r["model"] is None, -r["score"], r["n_L"], r["index"]))
    for rank, r in enumerate(rows, 1):
        r["rank"] = rank
    best = rows[0]["model"]
    best.metadata["validation"] = rows[0]["metrics"]
    board = [{k: v for k, v in r.items() if k != "model"} for r in rows]
    return GridResult(best, board)
