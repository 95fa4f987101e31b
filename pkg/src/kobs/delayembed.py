"""Delay-embedded Koopman models from outputs alone, and state reconstruction.

Windows are non-overlapping: ``z_t = [y_{n_d t}; ...; y_{n_d (t+1) - 1}]``
and window ``t`` is paired with the state sampled at ``n_d t``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import Adagrad, TrainingDiverged, r2_score
from .observables import MLP
from .ocdmd import (KoopmanModel, SnapshotSet, Standardization, _jsonable, expand_grid,
                    rollout, train_candidate, worker_count)
from .simulator import TrajectoryDataset
from . import svg


@dataclass
class DelayEmbedding:
    n_d: int
    outputs: tuple[int, ...]
    Zp: np.ndarray
    Zf: np.ndarray
    boundaries: list[int]
    windows: list[np.ndarray]  # per IC, (n_d*p, W)
    states: list[np.ndarray]  # per IC, (n, W): x at n_d*t


def _windows(Y: np.ndarray, n_d: int) -> np.ndarray:
    """(N, p) samples -> (n_d*p, N // n_d) stacked windows; trailing samples dropped."""
    count = Y.shape[0] // n_d
    return Y[:count * n_d].reshape(count, n_d * Y.shape[1]).T


def embed(dataset: TrajectoryDataset, n_d: int, split: str = "train",
          outputs: Sequence[int] | None = None) -> DelayEmbedding:
    outputs = tuple(range(dataset.spec.p)) if outputs is None else tuple(outputs)
    if not outputs:
        raise ValueError("need at least one output channel")
    if n_d < 1:
        raise ValueError("n_d must be >= 1")
    trajs = dataset.split(split)
    if not trajs:
        raise ValueError(f"split {split!r} is empty")
    Zp, Zf, bounds, wins, xs = [], [], [], [], []
    start = 0
    for tr in trajs:
        if len(tr.outputs) < 2 * n_d:
            raise ValueError(f"trajectory {tr.ic_id} has {len(tr.outputs)} samples; need >= 2*n_d = {2 * n_d}")
        Z = _windows(tr.outputs[:, list(outputs)], n_d)
        wins.append(Z)
        xs.append(tr.states[::n_d][:Z.shape[1]].T)
        Zp.append(Z[:, :-1])
        Zf.append(Z[:, 1:])
        bounds.append(start)
        start += Z.shape[1] - 1
    return DelayEmbedding(n_d, outputs, np.hstack(Zp), np.hstack(Zf), bounds, wins, xs)


@dataclass
class DelayKoopmanModel:
    model: KoopmanModel  # acts on standardized z; W_h is empty
    n_d: int
    outputs: tuple[int, ...]
    report: dict[str, dict[str, float]] = field(default_factory=dict)
    flags: list[str] = field(default_factory=list)

    @property
    def Kz(self) -> np.ndarray:
        return self.model.K

    @property
    def map(self):
        return self.model.map

    def lift(self, Z_raw: np.ndarray) -> np.ndarray:
        return self.model.lift(Z_raw)


def _delay_snapshots(emb: DelayEmbedding, stats: Standardization | None = None) -> SnapshotSet:
    empty = np.zeros((0, emb.Zp.shape[1]))
    if stats is None:
        stats = Standardization.fit(emb.Zp, empty)
    return SnapshotSet(stats.x(emb.Zp), stats.x(emb.Zf), empty, emb.boundaries, stats)


def score_delay(dm: DelayKoopmanModel, emb: DelayEmbedding) -> dict[str, float]:
    """1-step and n-step r^2 of window prediction (baseline: training mean of Z_p)."""
    st = dm.model.stats
    d = emb.Zp.shape[0]
    truth, one, multi = [], [], []
    with np.errstate(all="ignore"):
        for Z in emb.windows:
            P = dm.lift(Z)
            truth.append(Z[:, 1:])
            one.append(st.x_inv((dm.Kz @ P[:, :-1])[:d]))
            multi.append(st.x_inv(rollout(dm.Kz, P[:, 0], Z.shape[1] - 1)[:d]))
    truth = np.hstack(truth)
    return {
        "r2_z_1step": r2_score(truth, np.hstack(one), st.x_bar),
        "r2_z_nstep": r2_score(truth, np.hstack(multi), st.x_bar),
    }


DEFAULT_DELAY_GRID = {
    "n_d": [1, 2, 3, 4, 5, 6],
    "backend": ["network"],
    "hidden": [(24, 24)],
    "nonlinear_dim": [10],
    "lr": [0.02],
    "epochs": [800],
}


def fit_delay_koopman(dataset: TrajectoryDataset, grid: dict | list[dict] | None = None,
                      outputs: Sequence[int] | None = None, seed: int = 0):
    """Grid over ``n_d`` and observable settings; best model by validation r^2.

    The ranking key is the sum of validation 1-step and n-step z r^2.
    Returns ``(best, leaderboard)``.
    """
    combos = expand_grid(grid or DEFAULT_DELAY_GRID) if not isinstance(grid, list) else grid
    if not combos:
        raise ValueError("hyperparameter grid is empty")
    rows = []

    def run(idx):
        combo = dict(combos[idx])
        n_d = int(combo.pop("n_d", 1))
        try:
            emb_tr = embed(dataset, n_d, "train", outputs)
            emb_val = embed(dataset, n_d, "val", outputs)
            snaps = _delay_snapshots(emb_tr)
            combo.setdefault("output_weight", 0.0)
            model = train_candidate(snaps, combo, seed + idx)
            dm = DelayKoopmanModel(model, n_d, emb_tr.outputs)
            dm.report = {"train": score_delay(dm, emb_tr), "val": score_delay(dm, emb_val)}
            if not np.isfinite(dm.report["val"]["r2_z_1step"]):
                dm.flags.append("degenerate output variance: r^2 undefined")
            return idx, dm, None
        except (TrainingDiverged, np.linalg.LinAlgError) as exc:
            return idx, None, f"{type(exc).__name__}: {exc}"

    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        results = list(pool.map(run, range(len(combos))))
    for idx, dm, err in results:
        if dm is None:
            key = float("-inf")
        else:
            v = dm.report["val"]
            key = v["r2_z_1step"] + v["r2_z_nstep"]
            key = key if np.isfinite(key) else float("-inf")
        rows.append({"index": idx, "combo": _jsonable(combos[idx]), "dm": dm, "score": key, "error": err,
                     "val": dm.report["val"] if dm else {}})
    if all(r["dm"] is None for r in rows):
        raise TrainingDiverged("every delay-embedding combination failed: " +
                               "; ".join(f"#{r['index']}: {r['error']}" for r in rows), -1)
    rows.sort(key=lambda r: (r["dm"] is None, -r["score"], r["index"]))
    best = rows[0]["dm"]
    board = [{k: v for k, v in r.items() if k != "dm"} for r in rows]
    return best, board


@dataclass
class DiffeomorphismModel:
    encoder: MLP
    decoder: MLP
    dz: DelayKoopmanModel
    x_stats: Standardization
    r2: np.ndarray  # per-state, test split
    history: list[float] = field(default_factory=list)

    def reconstruct(self, Z_raw: np.ndarray) -> np.ndarray:
        return self.x_stats.x_inv(self.encoder.forward(self.dz.lift(Z_raw)))


def _pairs(dz: DelayKoopmanModel, dataset, split):
    emb = embed(dataset, dz.n_d, split, dz.outputs)
    Z = np.hstack(emb.windows)
    X = np.hstack(emb.states)
    return dz.lift(Z), X


def fit_diffeomorphism(dz: DelayKoopmanModel, dataset: TrajectoryDataset,
                       hidden: Sequence[int] = (32, 32), epochs: int = 3000, lr: float = 0.02,
                       recon_weight: float = 1.0, seed: int = 0, check_every: int = 50,
                       activation: str = "elu") -> DiffeomorphismModel:
    """Learn encoder ``g: psi_z(z) -> x`` and decoder ``g^-1: x -> psi_z``.

    Loss: ``|psi - g^-1(g(psi))|^2 + w |x - g(psi)|^2`` (column means, with
    ``x`` standardized by training statistics). The parameters with the best
    validation state error are kept; r^2 per state is reported on the test split.
    """
    P_tr, X_tr = _pairs(dz, dataset, "train")
    P_val, X_val = _pairs(dz, dataset, "val")
    x_stats = Standardization.fit(X_tr, np.zeros((0, X_tr.shape[1])))
    Xs_tr, Xs_val = x_stats.x(X_tr), x_stats.x(X_val)
    nP, n = P_tr.shape[0], X_tr.shape[0]
    enc = MLP((nP,) + tuple(hidden) + (n,), activation, seed)
    dec = MLP((n,) + tuple(hidden) + (nP,), activation, seed + 1)
    ne = enc.n_params
    params = np.concatenate([enc.params, dec.params])
    opt = Adagrad(params.size, lr=lr)
    m = P_tr.shape[1]
    history: list[float] = []
    best = (np.inf, params.copy())
    for epoch in range(epochs + 1):
        pe, pd = params[:ne], params[ne:]
        E = enc.forward(P_tr, pe)
        D = dec.forward(E, pd)
        r_auto = D - P_tr
        r_state = E - Xs_tr
        loss = (np.sum(r_auto ** 2) + recon_weight * np.sum(r_state ** 2)) / m
        if not np.isfinite(loss) or (history and loss > 1e3 * history[0]):
            raise TrainingDiverged("diffeomorphism loss diverged", epoch, history + [float(loss)])
        history.append(float(loss))
        if epoch % check_every == 0 or epoch == epochs:
            val_err = float(np.sum((enc.forward(P_val, pe) - Xs_val) ** 2))
            if val_err < best[0]:
                best = (val_err, params.copy())
        if epoch == epochs:
            break
        g_dec, g_E = dec.backward(E, (2.0 / m) * r_auto, pd)
        g_enc, _ = enc.backward(P_tr, g_E + (2.0 * recon_weight / m) * r_state, pe)
        params = opt.step(params, np.concatenate([g_enc, g_dec]))
    enc.params, dec.params = best[1][:ne].copy(), best[1][ne:].copy()
    P_te, X_te = _pairs(dz, dataset, "test")
    pred = enc.forward(P_te)
    truth = x_stats.x(X_te)
    r2 = np.array([r2_score(truth[i:i + 1], pred[i:i + 1], [0.0]) for i in range(n)])
    return DiffeomorphismModel(enc, dec, dz, x_stats, r2, history)


def reconstruction_report(models: dict[str, DiffeomorphismModel],
                          state_labels: Sequence[str] | None = None) -> tuple[str, str]:
    """CSV ``subset,state_index,r2`` and a grouped-bar SVG (groups = states)."""
    if not models:
        raise ValueError("need at least one output subset")
    names = list(models)
    n = len(next(iter(models.values())).r2)
    labels = list(state_labels or [f"x{i + 1}" for i in range(n)])
    lines = ["subset,state_index,r2"]
    for name in names:
        for j, v in enumerate(models[name].r2):
            lines.append(f"{name},{j + 1},{float(v)!r}")
    vals = np.array([[models[name].r2[j] for name in names] for j in range(n)])
    panel = svg.bar_chart("state reconstruction r^2 by output subset", labels, np.clip(vals, -1, 1), names)
    return "\n".join(lines) + "\n", svg.stack([panel])


def subset_name(outputs: Sequence[int]) -> str:
    return "-".join(f"y{o + 1}" for o in outputs)
