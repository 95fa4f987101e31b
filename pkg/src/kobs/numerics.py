"""Dense linear algebra and first-order optimization primitives."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

PINV_RTOL = 1e-10


class SVDConvergenceError(RuntimeError):
    def __init__(self, iterations: int):
        super().__init__(f"SVD did not converge (LAPACK iteration count {iterations})")
        self.iterations = iterations


class TrainingDiverged(RuntimeError):
    """Raised when an optimizer sees a non-finite or runaway loss."""

    def __init__(self, message: str, epoch: int, history: list[float] | None = None):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
        self.history = list(history or [])


@dataclass(frozen=True)
class SvdResult:
    u: np.ndarray
    s: np.ndarray
    v: np.ndarray


def svd(m: np.ndarray) -> SvdResult:
    """Full SVD ``m = u @ diag(s) @ v.T`` with a reproducible sign convention.

    Each right singular vector is flipped so its largest-magnitude entry is
    positive; the matching left vector is flipped with it.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise SVDConvergenceError(30 * max(m.shape)) from exc
    v = vt.T.copy()
    k = min(m.shape)
    for j in range(v.shape[1]):
        col = v[:, j]
        idx = np.argmax(np.abs(col))
        if col[idx] < 0:
            v[:, j] = -col
            if j < k:
                u[:, j] = -u[:, j]
    return SvdResult(u=u, s=s, v=v)


def pinv(a: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    u, s, vt = np.linalg.svd(np.asarray(a, dtype=float), full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0]))
    keep = s > rtol * s[0]
    return (vt[keep].T / s[keep]) @ u[:, keep].T


def least_squares(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimum-norm ``X`` minimizing ``||b - X a||_F``.

    Columns of ``a`` and ``b`` are paired samples, so this is the DMD-style
    regression ``X = b a^+`` with singular values below ``1e-10 s_max``
    discarded.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column count mismatch: a has {a.shape[1]} samples, b has {b.shape[1]}"
        )
    return b @ pinv(a)


def effective_rank(a: np.ndarray, rtol: float = PINV_RTOL) -> int:
    s = np.linalg.svd(np.asarray(a, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


@dataclass
class AdagradConfig:
    lr: float = 0.01
    epochs: int = 1000
    eps: float = 1e-8
    initial_accumulator: float = 0.0
    seed: int = 0


class Adagrad:
    """Per-parameter Adagrad; the accumulator starts at ``initial_accumulator``."""

    def __init__(self, size: int, lr: float = 0.01, eps: float = 1e-8,
                 initial_accumulator: float = 0.0):
        self.lr = lr
        self.eps = eps
        self.accum = np.full(size, float(initial_accumulator))

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.accum += grad * grad
        return params - self.lr * grad / (np.sqrt(self.accum) + self.eps)


@dataclass
class OptimizeResult:
    params: np.ndarray
    history: list[float] = field(default_factory=list)


def gradient_descent(
    loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
    params: np.ndarray,
    config: AdagradConfig | None = None,
) -> OptimizeResult:
    """Run ``config.epochs`` full-batch Adagrad updates.

    ``loss`` maps a parameter vector to ``(value, gradient)``. The recorded
    history holds the loss evaluated before each update.
    """
    config = config or AdagradConfig()
    p = np.array(params, dtype=float, copy=True)
    opt = Adagrad(p.size, config.lr, config.eps, config.initial_accumulator)
    history: list[float] = []
    for epoch in range(config.epochs):
        value, grad = loss(p)
        value = float(value)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise TrainingDiverged("non-finite loss", epoch, history)
        history.append(value)
        p = opt.step(p, np.asarray(grad, dtype=float))
    return OptimizeResult(params=p, history=history)


def r2_score(truth: np.ndarray, pred: np.ndarray, baseline: np.ndarray) -> float:
    """Pooled coefficient of determination against a fixed baseline mean.

    ``truth`` and ``pred`` are (dim, samples); ``baseline`` is broadcast
    against them. Returns NaN when the total sum of squares vanishes.
    """
    truth = np.asarray(truth, dtype=float)
    pred = np.asarray(pred, dtype=float)
    base = np.asarray(baseline, dtype=float).reshape(-1, 1)
    ss_res = float(np.sum((truth - pred) ** 2))
    ss_tot = float(np.sum((truth - base) ** 2))
    if ss_tot == 0.0:
        return float("nan")
    if not np.isfinite(ss_res):
        return float("-inf")
    return 1.0 - ss_res / ss_tot
