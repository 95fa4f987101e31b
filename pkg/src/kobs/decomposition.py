"""Observable/unobservable split of a Koopman model and state sensitivity ranking."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import svd
from .ocdmd import KoopmanModel, rollout
from . import svg


@dataclass
class DecomposedModel:
    source: KoopmanModel
    output_index: int
    V: np.ndarray
    n_oL: int
    K1: np.ndarray
    Wh1: np.ndarray
    coupling_residual: float
    reduced_r2: float
    r2_by_dim: list[float] = field(default_factory=list)
    no_reduction: bool = False
    singular_values: np.ndarray | None = None

    @property
    def K_transformed(self) -> np.ndarray:
        return self.V.T @ self.source.K @ self.V

    def reduced_observables(self, X_raw: np.ndarray) -> np.ndarray:
        """``psi_o(x)``: first ``n_oL`` rows of ``V^T psi(x)``."""
        return self.V[:, :self.n_oL].T @ self.source.lift(X_raw)


def _output_row(model: KoopmanModel, output_index: int) -> np.ndarray:
    if not 0 <= output_index < model.Wh.shape[0]:
        raise IndexError(f"output index {output_index} out of range for {model.Wh.shape[0]} outputs")
    w = model.Wh[output_index]
    if not np.any(w):
        raise ValueError(f"output row {output_index} of W_h is identically zero")
    return w


def observability_matrix(model: KoopmanModel, output_index: int = 0,
                         normalize: bool = True) -> np.ndarray:
    """Rows ``w, wK, ..., wK^{n_L}`` for the selected output row ``w``.

    Rows with norm above 1e-12 are rescaled to unit length; this leaves the
    row space, and so the right singular subspace split, unchanged.
    """
    w = _output_row(model, output_index)
    nL = model.lifted_dim
    rows = np.empty((nL + 1, nL))
    r = w.astype(float)
    for j in range(nL + 1):
        rows[j] = r
        if normalize:
            nrm = np.linalg.norm(r)
            if nrm > 1e-12:
                rows[j] = r / nrm
                # keep the recursion on the rescaled row to avoid overflow
                r = rows[j]
        r = r @ model.K
    return rows


def _r2_vs(reference: np.ndarray, approx: np.ndarray) -> float:
    ss_tot = float(np.sum((reference - reference.mean()) ** 2))
    ss_res = float(np.sum((reference - approx) ** 2))
    if not np.isfinite(ss_res):
        return float("-inf")
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else float("-inf")
    return 1.0 - ss_res / ss_tot


def decompose(model: KoopmanModel, output_index: int = 0, threshold: float = 0.99,
              trajectories: Sequence | None = None, X0: np.ndarray | None = None,
              n_steps: int | None = None) -> DecomposedModel:
    """Find the smallest leading block of ``V^T K V`` that reproduces the output.

    The reference is the full model's n-step output prediction from each
    training initial condition (``trajectories`` or raw ``X0`` columns with
    ``n_steps``); a truncation of size ``k`` passes when its own rollout
    matches that reference with r^2 >= ``threshold``.
    """
    w = _output_row(model, output_index)
    O = observability_matrix(model, output_index)
    res = svd(O)
    V = res.v
    Kt = V.T @ model.K @ V
    Wt = w @ V
    if trajectories is not None:
        X0 = np.column_stack([tr.states[0] for tr in trajectories])
        n_steps = len(trajectories[0].states) - 1
    if X0 is None or n_steps is None:
        raise ValueError("need training trajectories or initial conditions with a horizon")
    P0 = model.lift(X0)
    Z0 = V.T @ P0
    nL = model.lifted_dim
    ref = []
    with np.errstate(all="ignore"):
        for i in range(P0.shape[1]):
            traj = np.column_stack([P0[:, i], rollout(model.K, P0[:, i], n_steps)])
            ref.append(w @ traj)
    ref = np.concatenate(ref)
    r2s = []
    chosen = nL
    for k in range(1, nL + 1):
        K1 = Kt[:k, :k]
        pred = []
        with np.errstate(all="ignore"):
            for i in range(Z0.shape[1]):
                traj = np.column_stack([Z0[:k, i], rollout(K1, Z0[:k, i], n_steps)])
                pred.append(Wt[:k] @ traj)
        r2 = _r2_vs(ref, np.concatenate(pred))
        r2s.append(r2)
        if r2 >= threshold:
            chosen = k
            break
    k = chosen
    coupling = float(np.sqrt(np.sum(Kt[:k, k:] ** 2) + np.sum(Wt[k:] ** 2)))
    return DecomposedModel(
        source=model, output_index=output_index, V=V, n_oL=k, K1=Kt[:k, :k].copy(),
        Wh1=Wt[:k].copy(), coupling_residual=coupling, reduced_r2=r2s[-1], r2_by_dim=r2s,
        no_reduction=not any(r >= threshold for r in r2s[:nL - 1]),
        singular_values=res.s,
    )


@dataclass
class SensitivityReport:
    S: np.ndarray
    norms: np.ndarray
    ranking: list[int]
    output_index: int = 0

    def rank_of(self, state: int) -> int:
        """1-based position of a 0-based state index in the ranking."""
        return self.ranking.index(state) + 1


def sensitivity(dec: DecomposedModel, Xtrain: np.ndarray) -> SensitivityReport:
    """Maximum absolute gradients of ``psi_o`` over the training states.

    ``Xtrain`` is raw ``(n, m)``; gradients are taken with respect to the
    standardized state.
    """
    Xtrain = np.asarray(Xtrain, dtype=float)
    if Xtrain.ndim != 2 or Xtrain.shape[1] == 0:
        raise ValueError("need a non-empty (n, m) matrix of training states")
    model = dec.source
    Xs = model.stats.x(Xtrain)
    Vo = dec.V[:, :dec.n_oL]
    S = np.zeros((dec.n_oL, model.map.n))
    for start in range(0, Xs.shape[1], 2048):
        J = model.map.jacobians(Xs[:, start:start + 2048])
        G = np.einsum("lk,mln->mkn", Vo, J)
        S = np.maximum(S, np.abs(G).max(axis=0))
    norms = np.linalg.norm(S, axis=0)
    ranking = [int(i) for i in np.argsort(-norms, kind="stable")]
    return SensitivityReport(S=S, norms=norms, ranking=ranking, output_index=dec.output_index)


def average_reports(reports: Sequence[SensitivityReport]) -> SensitivityReport:
    """Average norms across repeated fits (e.g. seeds) and re-rank.

    The returned matrix is the elementwise mean only when all reports share a
    reduced dimension; otherwise it holds the averaged norms as a single row.
    """
    norms = np.mean([r.norms for r in reports], axis=0)
    shapes = {r.S.shape for r in reports}
    S = np.mean([r.S for r in reports], axis=0) if len(shapes) == 1 else norms[None, :]
    ranking = [int(i) for i in np.argsort(-norms, kind="stable")]
    return SensitivityReport(S=S, norms=norms, ranking=ranking, output_index=reports[0].output_index)


def rank_report(reports: Sequence[SensitivityReport],
                state_labels: Sequence[str] | None = None) -> tuple[str, str, str]:
    """Render per-output rankings.

    Returns ``(ranking_csv, matrix_csv, svg_text)``; the CSV headers are
    ``output_id,state_index,norm,rank`` and
    ``output_id,obs_index,state_index,max_grad`` (1-based ids).
    """
    if not reports:
        raise ValueError("need at least one sensitivity report")
    n = len(reports[0].norms)
    labels = list(state_labels or [f"x{i + 1}" for i in range(n)])
    rank_lines = ["output_id,state_index,norm,rank"]
    mat_lines = ["output_id,obs_index,state_index,max_grad"]
    panels = []
    for rep in reports:
        oid = rep.output_index + 1
        for j in range(n):
            rank_lines.append(f"{oid},{j + 1},{float(rep.norms[j])!r},{rep.rank_of(j)}")
        for i in range(rep.S.shape[0]):
            for j in range(n):
                mat_lines.append(f"{oid},{i + 1},{j + 1},{float(rep.S[i, j])!r}")
        order = rep.ranking
        panels.append(svg.bar_chart(f"y{oid}: state contribution (descending)",
                                    [labels[j] for j in order], [float(rep.norms[j]) for j in order]))
        panels.append(svg.heatmap(f"y{oid}: max |d psi_o / d x|", rep.S, labels))
    return "\n".join(rank_lines) + "\n", "\n".join(mat_lines) + "\n", svg.stack(panels)
