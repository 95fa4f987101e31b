"""State-inclusive observable maps ``psi(x) = [x; phi(x); 1]``.

Two backends share one interface: a fixed function dictionary (monomials or
Gaussian RBFs) and a small feedforward network whose output layer is
``phi``. Both provide exact Jacobians with respect to ``x``; the network
additionally back-propagates into its flat parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Sequence

import numpy as np


# ---------------------------------------------------------------- activations

def _elu(z):
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_grad(z):
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _tanh_grad(z):
    t = np.tanh(z)
    return 1.0 - t * t


ACTIVATIONS = {
    "elu": (_elu, _elu_grad),
    "tanh": (np.tanh, _tanh_grad),
}


class MLP:
    """Fully connected network with a linear output layer.

    Inputs and outputs are column-major batches: ``(in_dim, m) -> (out_dim, m)``.
    """

    def __init__(self, widths: Sequence[int], activation: str = "elu", seed: int = 0):
        if len(widths) < 2:
            raise ValueError("need at least an input and an output width")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = tuple(int(w) for w in widths)
        self.activation = activation
        self._act, self._act_grad = ACTIVATIONS[activation]
        self._shapes = [(o, i) for i, o in zip(self.widths[:-1], self.widths[1:])]
        rng = np.random.default_rng(seed)
        chunks = []
        for o, i in self._shapes:
            limit = np.sqrt(6.0 / (i + o))
            chunks.append(rng.uniform(-limit, limit, size=o * i))
            chunks.append(np.zeros(o))
        self.params = np.concatenate(chunks)

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self._shapes)

    def layers(self, params=None):
        params = self.params if params is None else params
        out, k = [], 0
        for o, i in self._shapes:
            W = params[k:k + o * i].reshape(o, i)
            k += o * i
            b = params[k:k + o]
            k += o
            out.append((W, b))
        return out

    def forward(self, X, params=None, cache=False):
        layers = self.layers(params)
        a = X
        pre, acts = [], [X]
        for idx, (W, b) in enumerate(layers):
            z = W @ a + b[:, None]
            if idx == len(layers) - 1:
                a = z
            else:
                pre.append(z)
                a = self._act(z)
            acts.append(a)
        if cache:
            return a, (pre, acts)
        return a

    def backward(self, X, upstream, params=None):
        """Gradient of ``sum(upstream * forward(X))``.

        Returns ``(param_grad, input_grad)``.
        """
        layers = self.layers(params)
        _, (pre, acts) = self.forward(X, params, cache=True)
        delta = upstream
        grads = []
        for idx in range(len(layers) - 1, -1, -1):
            W, _ = layers[idx]
            grads.append((delta.sum(axis=1), delta @ acts[idx].T))
            delta = W.T @ delta
            if idx > 0:
                delta = delta * self._act_grad(pre[idx - 1])
        flat = []
        for gb, gW in reversed(grads):
            flat.append(gW.ravel())
            flat.append(gb)
        return np.concatenate(flat), delta

    def input_jacobians(self, X, params=None):
        """Per-column Jacobians ``(m, out_dim, in_dim)``."""
        layers = self.layers(params)
        _, (pre, _) = self.forward(X, params, cache=True)
        W0, _ = layers[0]
        J = np.broadcast_to(W0, (X.shape[1],) + W0.shape)
        for idx in range(1, len(layers)):
            J = self._act_grad(pre[idx - 1]).T[:, :, None] * J
            J = np.einsum("oi,mij->moj", layers[idx][0], J)
        return np.array(J)


# ---------------------------------------------------------------- maps

@dataclass(frozen=True)
class NetworkShape:
    layer_widths: tuple[int, ...]
    activation: str = "elu"
    init_seed: int = 0

    def __post_init__(self):
        if len(self.layer_widths) < 3:
            raise ValueError("a network shape needs at least one hidden layer")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


def graded_lex_monomials(n: int, degree: int, min_degree: int = 2) -> list[tuple[int, ...]]:
    """Exponent tuples of total degree ``min_degree..degree`` in graded-lex order."""
    out = []
    for d in range(min_degree, degree + 1):
        exps = []
        for combo in combinations_with_replacement(range(n), d):
            e = [0] * n
            for i in combo:
                e[i] += 1
            exps.append(tuple(e))
        out.extend(sorted(exps, reverse=True))
    return out


class ObservableMap:
    """Common interface; see :class:`DictionaryMap` and :class:`NetworkMap`."""

    backend = "abstract"
    n: int
    nonlinear_dim: int

    @property
    def lifted_dim(self) -> int:
        return self.n + self.nonlinear_dim + 1

    @property
    def parameters(self) -> np.ndarray:
        return np.zeros(0)

    def phi(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def phi_jacobians(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[:, None]
        if X.shape[0] != self.n:
            raise ValueError(f"expected {self.n} rows, got {X.shape[0]}")
        out = np.empty((self.lifted_dim, X.shape[1]))
        out[:self.n] = X
        out[self.n:-1] = self.phi(X)
        out[-1] = 1.0
        return out[:, 0] if single else out

    def jacobians(self, X) -> np.ndarray:
        """Jacobians of ``psi`` at each column of ``X``: ``(m, n_L, n)``."""
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"expected {self.n} rows, got {X.shape[0]}")
        m = X.shape[1]
        J = np.zeros((m, self.lifted_dim, self.n))
        J[:, :self.n, :] = np.eye(self.n)
        J[:, self.n:-1, :] = self.phi_jacobians(X)
        return J

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.n:
            raise ValueError(f"expected a state of length {self.n}, got {x.shape[0]}")
        return self.jacobians(x[:, None])[0]

    def backprop(self, X, upstream) -> np.ndarray:
        raise TypeError(f"{self.backend} map has no trainable parameters")

    def descriptor(self) -> dict:
        raise NotImplementedError


class DictionaryMap(ObservableMap):
    backend = "dictionary"

    def __init__(self, n: int, monomials: Sequence[Sequence[int]] = (),
                 centers: np.ndarray | None = None, sigma: float = 1.0):
        self.n = int(n)
        self.monomials = np.array([tuple(int(e) for e in m) for m in monomials], dtype=int).reshape(-1, self.n)
        self.centers = (np.zeros((0, self.n)) if centers is None
                        else np.atleast_2d(np.asarray(centers, dtype=float)))
        if self.centers.shape[1] != self.n:
            raise ValueError(f"RBF centers must have dimension {self.n}")
        self.sigma = float(sigma)
        self.nonlinear_dim = len(self.monomials) + len(self.centers)

    def phi(self, X):
        parts = []
        if len(self.monomials):
            parts.append(np.prod(X[None, :, :] ** self.monomials[:, :, None], axis=1))
        if len(self.centers):
            d2 = ((X[None, :, :] - self.centers[:, :, None]) ** 2).sum(axis=1)
            parts.append(np.exp(-d2 / (2.0 * self.sigma ** 2)))
        if not parts:
            return np.zeros((0, X.shape[1]))
        return np.vstack(parts)

    def phi_jacobians(self, X):
        m = X.shape[1]
        rows = []
        if len(self.monomials):
            E = self.monomials
            Jm = np.zeros((m, len(E), self.n))
            for k in range(self.n):
                Ek = E.copy()
                coef = Ek[:, k].astype(float)
                Ek[:, k] = np.maximum(Ek[:, k] - 1, 0)
                Jm[:, :, k] = (coef[:, None] * np.prod(X[None, :, :] ** Ek[:, :, None], axis=1)).T
            rows.append(Jm)
        if len(self.centers):
            diff = X[None, :, :] - self.centers[:, :, None]  # (c, n, m)
            val = np.exp(-(diff ** 2).sum(axis=1) / (2.0 * self.sigma ** 2))  # (c, m)
            Jr = -(diff * val[:, None, :]) / self.sigma ** 2
            rows.append(np.transpose(Jr, (2, 0, 1)))
        if not rows:
            return np.zeros((m, 0, self.n))
        return np.concatenate(rows, axis=1)

    def labels(self) -> list[str]:
        names = [f"x{i + 1}" for i in range(self.n)]
        for e in self.monomials:
            names.append("*".join(f"x{i + 1}^{p}" if p > 1 else f"x{i + 1}" for i, p in enumerate(e) if p))
        names += [f"rbf{j}" for j in range(len(self.centers))]
        return names + ["1"]

    def descriptor(self):
        return {
            "backend": self.backend,
            "n": self.n,
            "monomials": self.monomials.tolist(),
            "centers": self.centers.tolist(),
            "sigma": self.sigma,
        }


class NetworkMap(ObservableMap):
    backend = "network"

    def __init__(self, shape: NetworkShape, params: np.ndarray | None = None):
        self.shape = shape
        self.net = MLP(shape.layer_widths, shape.activation, shape.init_seed)
        if params is not None:
            params = np.asarray(params, dtype=float)
            if params.shape != self.net.params.shape:
                raise ValueError("parameter vector does not match the network shape")
            self.net.params = params.copy()
        self.n = shape.layer_widths[0]
        self.nonlinear_dim = shape.layer_widths[-1]

    @property
    def parameters(self):
        return self.net.params

    def with_parameters(self, params) -> "NetworkMap":
        return NetworkMap(self.shape, params)

    def phi(self, X):
        return self.net.forward(X)

    def phi_jacobians(self, X):
        return self.net.input_jacobians(X)

    def backprop(self, X, upstream):
        """Gradient of ``<upstream, psi(X)>`` with respect to the network parameters.

        Only the ``phi`` rows of ``upstream`` matter; state and bias rows do
        not depend on the parameters.
        """
        X = np.asarray(X, dtype=float)
        upstream = np.asarray(upstream, dtype=float)
        if upstream.shape != (self.lifted_dim, X.shape[1]):
            raise ValueError(f"upstream must be {(self.lifted_dim, X.shape[1])}, got {upstream.shape}")
        grad, _ = self.net.backward(X, upstream[self.n:-1])
        return grad

    def descriptor(self):
        return {
            "backend": self.backend,
            "layer_widths": list(self.shape.layer_widths),
            "activation": self.shape.activation,
            "init_seed": self.shape.init_seed,
            "parameters": [float(v) for v in self.net.params],
        }


def make_dictionary(n: int, degree: int | None = None, centers=None, sigma: float = 1.0,
                    monomials: Sequence[Sequence[int]] | None = None) -> DictionaryMap:
    """Build a dictionary map.

    Give ``degree`` (>= 2) for all monomials of total degree 2..degree,
    ``monomials`` for an explicit exponent list, or ``centers`` for Gaussian
    RBFs ``exp(-|x-c|^2 / (2 sigma^2))``. Kinds may be combined; with none
    of them the map is the plain linear lifting ``[x; 1]``.
    """
    mons: list[tuple[int, ...]] = []
    if degree is not None:
        if degree < 2:
            raise ValueError("polynomial degree must be >= 2")
        mons += graded_lex_monomials(n, degree)
    if monomials is not None:
        mons += [tuple(m) for m in monomials]
    if centers is not None and len(np.atleast_2d(centers)) == 0:
        raise ValueError("need at least one RBF center")
    return DictionaryMap(n, mons, centers, sigma)


def make_network(shape: NetworkShape) -> NetworkMap:
    return NetworkMap(shape)


def map_from_descriptor(desc: dict) -> ObservableMap:
    if desc["backend"] == "dictionary":
        centers = np.array(desc["centers"], dtype=float).reshape(-1, desc["n"])
        return DictionaryMap(desc["n"], desc["monomials"], centers if len(centers) else None, desc["sigma"])
    if desc["backend"] == "network":
        shape = NetworkShape(tuple(desc["layer_widths"]), desc["activation"], desc["init_seed"])
        return NetworkMap(shape, np.array(desc["parameters"], dtype=float))
    raise ValueError(f"unknown observable backend {desc['backend']!r}")


# the four nonlinear observables of the analytical example:
# x1^2, x2^2, x1^4, x1^2 x2
ANALYTICAL_MONOMIALS = ((2, 0), (0, 2), (4, 0), (2, 1))


def analytical_dictionary() -> DictionaryMap:
    return make_dictionary(2, monomials=ANALYTICAL_MONOMIALS)
